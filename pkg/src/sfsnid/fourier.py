"""Per-channel 2-D discrete Fourier analysis and amplitude/phase algebra.

Conventions: the forward transform is unnormalised,

    F(u, v) = sum_h sum_w z(h, w) exp(-2j*pi*(h*u/H + w*v/W)),

and the inverse carries the 1/(H*W) factor. Transforms act on the last two
axes of a ``[B, C, H, W]`` tensor, channel by channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Function, Tensor, atan2, cos, hypot, mul, sin


@dataclass
class ComplexSpectrum:
    real: Tensor
    imag: Tensor

    @property
    def spatial_dims(self) -> tuple[int, int]:
        return self.real.shape[-2], self.real.shape[-1]

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ValueError(f"real {self.real.shape} and imag {self.imag.shape} shapes differ")

    def to_complex(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


@dataclass
class AmpPhase:
    amplitude: Tensor
    phase: Tensor

    def __post_init__(self):
        if self.amplitude.shape != self.phase.shape:
            raise ValueError(f"amplitude {self.amplitude.shape} and phase {self.phase.shape} shapes differ")


# ---------------------------------------------------------------------------
# raw array transforms


def dft_matrix(n: int, inverse: bool = False) -> np.ndarray:
    """The n x n DFT matrix exp(-+2j*pi*k*m/n), unnormalised."""
    k = np.arange(n)
    # reduce k*m mod n before scaling so large products keep full precision
    km = np.mod(np.outer(k, k), n)
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * km / n)


def dft2_direct(z: np.ndarray) -> np.ndarray:
    """Brute-force double sum over (h, w), evaluated as two matrix products."""
    h, w = z.shape[-2:]
    return dft_matrix(h) @ z @ dft_matrix(w).T


def idft2_direct(s: np.ndarray) -> np.ndarray:
    h, w = s.shape[-2:]
    return dft_matrix(h, inverse=True) @ s @ dft_matrix(w, inverse=True).T / (h * w)


def fft2_fast(z: np.ndarray) -> np.ndarray:
    """Fast forward transform over the last two axes (any size)."""
    return np.fft.fft2(z, axes=(-2, -1))


def ifft2_fast(s: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(s, axes=(-2, -1))


def hermitian_symmetrize(s: np.ndarray) -> np.ndarray:
    """Project onto spectra of real signals: (S(u,v) + conj(S(-u,-v))) / 2.

    Self-conjugate bins (DC, Nyquist rows/columns) get an exactly zero
    imaginary part, which keeps their phase off the atan2 branch cut.
    """
    flipped = np.roll(np.flip(s, axis=(-2, -1)), shift=(1, 1), axis=(-2, -1))
    return 0.5 * (s + np.conj(flipped))


# ---------------------------------------------------------------------------
# differentiable transforms


class DFT2(Function):
    """Real ``[..., H, W]`` -> (real, imag) spectrum."""

    name = "dft2"

    @staticmethod
    def forward(ctx, z):
        s = hermitian_symmetrize(fft2_fast(z))
        ctx["hw"] = z.shape[-2] * z.shape[-1]
        return s.real.astype(z.dtype), s.imag.astype(z.dtype)

    @staticmethod
    def backward(ctx, g_real, g_imag):
        g = ctx["hw"] * ifft2_fast(g_real + 1j * g_imag)
        return (g.real.astype(g_real.dtype),)


class IDFT2(Function):
    """(real, imag) spectrum -> real part of the inverse transform."""

    name = "idft2"

    @staticmethod
    def forward(ctx, real, imag):
        return ifft2_fast(real + 1j * imag).real.astype(real.dtype)

    @staticmethod
    def backward(ctx, g):
        t = ifft2_fast(g)
        return t.real.astype(g.dtype), (-t.imag).astype(g.dtype)


def dft2(z: Tensor) -> ComplexSpectrum:
    real, imag = DFT2.apply(z)
    return ComplexSpectrum(real, imag)


def idft2(s: ComplexSpectrum) -> Tensor:
    return IDFT2.apply(s.real, s.imag)


def to_amp_phase(s: ComplexSpectrum) -> AmpPhase:
    return AmpPhase(hypot(s.real, s.imag), atan2(s.imag, s.real))


def from_amp_phase(ap: AmpPhase, validate: bool = True) -> ComplexSpectrum:
    """Polar to Cartesian: real = A cos P, imag = A sin P.

    With ``validate`` the amplitude must be nonnegative. Learned filters may
    push a filtered amplitude below zero, so the network passes
    ``validate=False`` and lets the product carry the sign.
    """
    if validate and (ap.amplitude.data < 0).any():
        raise ValueError("from_amp_phase: amplitude must be nonnegative")
    return ComplexSpectrum(mul(ap.amplitude, cos(ap.phase)), mul(ap.amplitude, sin(ap.phase)))


def log_amplitude_image(amplitude: np.ndarray) -> np.ndarray:
    """Centre the spectrum and map log(1 + A) to [0, 1] for viewing."""
    a = np.log1p(np.fft.fftshift(np.abs(amplitude), axes=(-2, -1)))
    hi = a.max()
    return a / hi if hi > 0 else a


def phase_image(phase: np.ndarray) -> np.ndarray:
    return (np.fft.fftshift(phase, axes=(-2, -1)) + np.pi) / (2 * np.pi)
