"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable primitive is a :class:`Function` subclass with a
``forward`` that works on raw numpy arrays and a ``backward`` that maps
output gradients to input gradients. Subclasses register themselves in
:data:`OPS`, which the gradient-check suite walks to guarantee coverage.

Executed operations are recorded as :class:`Node` objects carrying a
monotonically increasing sequence number. Sorting the nodes reachable from
a loss by that number in descending order gives the reverse of execution
order, which is a valid reverse topological order of the graph.
"""

from __future__ import annotations

import itertools
from typing import Any, Sequence

import numpy as np

OPS: dict[str, type["Function"]] = {}

_DTYPE = np.float64
_grad_enabled = True
_sequence = itertools.count()


def set_default_dtype(dtype) -> None:
    """Select float64 (verification) or float32 (speed) for new tensors."""
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported dtype {dtype}; use float64 or float32")
    _DTYPE = dtype.type


def get_default_dtype():
    return _DTYPE


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Node:
    """One executed differentiable operation."""

    __slots__ = ("fn", "ctx", "inputs", "out_meta", "seq", "consumed")

    def __init__(self, fn, ctx, inputs, out_meta):
        self.fn = fn
        self.ctx = ctx
        self.inputs = inputs
        self.out_meta = out_meta  # (shape, dtype) per output
        self.seq = next(_sequence)
        self.consumed = False


class Tensor:
    """A real n-d array that may participate in gradient recording."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _DTYPE, copy=True)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = np.zeros_like(arr) if requires_grad else None
        self._node: Node | None = None
        self._index = 0

    @classmethod
    def _from_op(cls, data: np.ndarray, node: Node | None, index: int) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = node is not None
        t.grad = None
        t._node = node
        t._index = index
        return t

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor._from_op(self.data, None, 0)

    def zero_grad(self) -> None:
        if self.requires_grad and self.is_leaf:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return Neg.apply(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return GetItem.apply(self, key=key)

    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """Base class for differentiable primitives.

    ``forward(ctx, *arrays, **kwargs)`` returns an array or a tuple of
    arrays. ``backward(ctx, *grads)`` returns one gradient (or ``None``)
    per tensor input.
    """

    name: str = ""

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.name:
            OPS[cls.name] = cls

    @staticmethod
    def forward(ctx, *args, **kwargs):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, *grads):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs):
        tensors = tuple(None if x is None else as_tensor(x) for x in inputs)
        ctx: dict[str, Any] = {}
        arrays = tuple(None if t is None else t.data for t in tensors)
        out = cls.forward(ctx, *arrays, **kwargs)
        multi = isinstance(out, tuple)
        outs = out if multi else (out,)
        for o in outs:
            if not np.isfinite(o).all():
                raise FloatingPointError(f"non-finite values produced by op '{cls.name}'")
        track = _grad_enabled and any(t is not None and t.requires_grad for t in tensors)
        node = None
        if track:
            node = Node(cls, ctx, tensors, tuple((o.shape, o.dtype) for o in outs))
        results = tuple(Tensor._from_op(o, node, i) for i, o in enumerate(outs))
        return results if multi else results[0]


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires grad and reaches ``loss``."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise RuntimeError("loss is not attached to any recorded operation")
    if loss._node.consumed:
        raise RuntimeError("graph already consumed by a previous backward(); rerun the forward pass")

    nodes: dict[int, Node] = {}
    stack = [loss._node]
    while stack:
        n = stack.pop()
        if id(n) in nodes:
            continue
        nodes[id(n)] = n
        for t in n.inputs:
            if t is not None and t._node is not None and id(t._node) not in nodes:
                stack.append(t._node)
    order = sorted(nodes.values(), key=lambda n: n.seq, reverse=True)

    pending: dict[int, list] = {id(loss._node): [None] * len(loss._node.out_meta)}
    pending[id(loss._node)][loss._index] = np.ones(loss.shape, dtype=loss.dtype)
    for node in order:
        gouts = pending.pop(id(node), None)
        if gouts is None:
            node.consumed = True
            node.ctx = None
            continue
        gouts = [np.zeros(s, dtype=d) if g is None else g for g, (s, d) in zip(gouts, node.out_meta)]
        gins = node.fn.backward(node.ctx, *gouts)
        if not isinstance(gins, tuple):
            gins = (gins,)
        if len(gins) != len(node.inputs):
            raise RuntimeError(f"op '{node.fn.name}' returned {len(gins)} grads for {len(node.inputs)} inputs")
        for t, g in zip(node.inputs, gins):
            if t is None or g is None or not t.requires_grad:
                continue
            if g.shape != t.shape:
                raise RuntimeError(f"op '{node.fn.name}' produced grad of shape {g.shape} for input {t.shape}")
            if t._node is None:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g
            else:
                slot = pending.setdefault(id(t._node), [None] * len(t._node.out_meta))
                slot[t._index] = g if slot[t._index] is None else slot[t._index] + g
        node.consumed = True
        node.ctx = None


# ---------------------------------------------------------------------------
# helpers


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: operands with shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


class Add(Function):
    name = "add"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "add")
        ctx["shapes"] = (a.shape, b.shape)
        return a + b

    @staticmethod
    def backward(ctx, g):
        sa, sb = ctx["shapes"]
        return _unbroadcast(g, sa), _unbroadcast(g, sb)


class Sub(Function):
    name = "sub"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "sub")
        ctx["shapes"] = (a.shape, b.shape)
        return a - b

    @staticmethod
    def backward(ctx, g):
        sa, sb = ctx["shapes"]
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)


class Mul(Function):
    name = "mul"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "mul")
        ctx["ab"] = (a, b)
        return a * b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx["ab"]
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


class Div(Function):
    name = "div"

    @staticmethod
    def forward(ctx, a, b):
        _check_broadcast(a, b, "div")
        ctx["ab"] = (a, b)
        with np.errstate(divide="ignore", invalid="ignore"):  # apply() reports non-finite results
            return a / b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx["ab"]
        return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


class Neg(Function):
    name = "neg"

    @staticmethod
    def forward(ctx, a):
        return -a

    @staticmethod
    def backward(ctx, g):
        return (-g,)


class Power(Function):
    """``x ** exponent`` for a constant scalar exponent."""

    name = "power"

    @staticmethod
    def forward(ctx, a, exponent):
        exponent = float(exponent)
        if not exponent.is_integer() and (a < 0).any():
            raise ValueError(f"power: negative base with fractional exponent {exponent}")
        ctx["a"], ctx["k"] = a, exponent
        return np.power(a, exponent)

    @staticmethod
    def backward(ctx, g):
        a, k = ctx["a"], ctx["k"]
        if k == 0:
            return (np.zeros_like(a),)
        if k >= 1:
            d = k * np.power(a, k - 1)
        else:
            with np.errstate(divide="ignore"):
                d = np.where(a == 0, 0.0, k * np.power(np.where(a == 0, 1.0, a), k - 1))
        return (g * d,)


class Abs(Function):
    name = "abs"

    @staticmethod
    def forward(ctx, a):
        ctx["sign"] = np.sign(a)
        return np.abs(a)

    @staticmethod
    def backward(ctx, g):
        return (g * ctx["sign"],)


class Cos(Function):
    name = "cos"

    @staticmethod
    def forward(ctx, a):
        ctx["a"] = a
        return np.cos(a)

    @staticmethod
    def backward(ctx, g):
        return (-g * np.sin(ctx["a"]),)


class Sin(Function):
    name = "sin"

    @staticmethod
    def forward(ctx, a):
        ctx["a"] = a
        return np.sin(a)

    @staticmethod
    def backward(ctx, g):
        return (g * np.cos(ctx["a"]),)


class Hypot(Function):
    """``sqrt(a**2 + b**2)``; the gradient at the origin is taken as zero."""

    name = "hypot"

    @staticmethod
    def forward(ctx, a, b):
        r = np.hypot(a, b)
        ctx["abr"] = (a, b, r)
        return r

    @staticmethod
    def backward(ctx, g):
        a, b, r = ctx["abr"]
        zero = r == 0
        safe = np.where(zero, 1.0, r)
        ga = np.where(zero, 0.0, g * a / safe)
        gb = np.where(zero, 0.0, g * b / safe)
        return ga, gb


class Atan2(Function):
    """Quadrant-correct ``atan2(y, x)`` with ``atan2(0, 0) = 0``."""

    name = "atan2"

    @staticmethod
    def forward(ctx, y, x):
        ctx["yx"] = (y, x)
        return np.arctan2(y, x)

    @staticmethod
    def backward(ctx, g):
        y, x = ctx["yx"]
        r2 = x * x + y * y
        zero = r2 == 0
        safe = np.where(zero, 1.0, r2)
        gy = np.where(zero, 0.0, g * x / safe)
        gx = np.where(zero, 0.0, -g * y / safe)
        return gy, gx


# ---------------------------------------------------------------------------
# activations


class LeakyReLU(Function):
    name = "leaky_relu"

    @staticmethod
    def forward(ctx, a, slope):
        mask = a > 0
        ctx["mask"], ctx["slope"] = mask, slope
        return np.where(mask, a, slope * a)

    @staticmethod
    def backward(ctx, g):
        return (np.where(ctx["mask"], g, ctx["slope"] * g),)


class Sigmoid(Function):
    name = "sigmoid"

    @staticmethod
    def forward(ctx, a):
        # split by sign so exp never overflows
        e = np.exp(-np.abs(a))
        y = np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype, copy=False)
        ctx["y"] = y
        return y

    @staticmethod
    def backward(ctx, g):
        y = ctx["y"]
        return (g * y * (1.0 - y),)


class Softmax(Function):
    name = "softmax"

    @staticmethod
    def forward(ctx, a, axis):
        e = np.exp(a - a.max(axis=axis, keepdims=True))
        y = e / e.sum(axis=axis, keepdims=True)
        ctx["y"], ctx["axis"] = y, axis
        return y

    @staticmethod
    def backward(ctx, g):
        y, axis = ctx["y"], ctx["axis"]
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


# ---------------------------------------------------------------------------
# reductions and shape manipulation


class Sum(Function):
    name = "sum"

    @staticmethod
    def forward(ctx, a, axis=None, keepdims=False):
        ctx["shape"], ctx["axis"], ctx["keepdims"] = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(ctx, g):
        shape, axis, keepdims = ctx["shape"], ctx["axis"], ctx["keepdims"]
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)


class Mean(Function):
    name = "mean"

    @staticmethod
    def forward(ctx, a, axis=None, keepdims=False):
        ctx["shape"], ctx["axis"], ctx["keepdims"] = a.shape, axis, keepdims
        out = np.asarray(a.mean(axis=axis, keepdims=keepdims))
        ctx["count"] = a.size // max(out.size, 1)
        return out

    @staticmethod
    def backward(ctx, g):
        shape, axis, keepdims = ctx["shape"], ctx["axis"], ctx["keepdims"]
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / ctx["count"], shape).copy(),)


class Reshape(Function):
    name = "reshape"

    @staticmethod
    def forward(ctx, a, shape):
        ctx["shape"] = a.shape
        return a.reshape(shape)

    @staticmethod
    def backward(ctx, g):
        return (g.reshape(ctx["shape"]),)


class Transpose(Function):
    name = "transpose"

    @staticmethod
    def forward(ctx, a, axes):
        ctx["axes"] = axes
        return np.ascontiguousarray(a.transpose(axes))

    @staticmethod
    def backward(ctx, g):
        return (np.ascontiguousarray(g.transpose(np.argsort(ctx["axes"]))),)


class GetItem(Function):
    name = "getitem"

    @staticmethod
    def forward(ctx, a, key):
        ctx["shape"], ctx["key"], ctx["dtype"] = a.shape, key, a.dtype
        return np.array(a[key])

    @staticmethod
    def backward(ctx, g):
        out = np.zeros(ctx["shape"], dtype=ctx["dtype"])
        key = ctx["key"]
        parts = key if isinstance(key, tuple) else (key,)
        if all(isinstance(k, (slice, int)) or k is Ellipsis for k in parts):
            out[key] = g  # basic indexing never aliases an element twice
        else:
            np.add.at(out, key, g)
        return (out,)


class Take(Function):
    """Gather entries of a flat table by an integer index array."""

    name = "take"

    @staticmethod
    def forward(ctx, table, index):
        if table.ndim != 1:
            raise ValueError(f"take: table must be 1-d, got shape {table.shape}")
        ctx["n"], ctx["index"] = table.size, index
        return table[index]

    @staticmethod
    def backward(ctx, g):
        flat = np.bincount(ctx["index"].ravel(), weights=g.ravel(), minlength=ctx["n"])
        return (flat.astype(g.dtype, copy=False),)


class Concat(Function):
    name = "concat"

    @staticmethod
    def forward(ctx, *arrays, axis=1):
        ref = arrays[0].shape
        for i, a in enumerate(arrays):
            if a.ndim != len(ref) or any(a.shape[d] != ref[d] for d in range(a.ndim) if d != axis % a.ndim):
                raise ValueError(f"concat: operand {i} has shape {a.shape}, incompatible with {ref} off axis {axis}")
        ctx["sizes"], ctx["axis"] = [a.shape[axis] for a in arrays], axis
        return np.concatenate(arrays, axis=axis)

    @staticmethod
    def backward(ctx, g):
        splits = np.cumsum(ctx["sizes"])[:-1]
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=ctx["axis"]))


class MatMul(Function):
    name = "matmul"

    @staticmethod
    def forward(ctx, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
        ctx["ab"] = (a, b)
        return np.matmul(a, b)

    @staticmethod
    def backward(ctx, g):
        a, b = ctx["ab"]
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


# ---------------------------------------------------------------------------
# image ops (NCHW)


def _conv_cols(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """im2col as ``[B, C*k*k, Ho*Wo]`` built from k*k strided slices."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
    return cols.reshape(b, c * k * k, ho * wo)


class Conv2d(Function):
    """Cross-correlation with zero 'same' padding (``k // 2``)."""

    name = "conv2d"

    @staticmethod
    def forward(ctx, x, w, b=None, stride=1):
        if x.ndim != 4:
            raise ValueError(f"conv2d: input must be [B,C,H,W], got shape {x.shape}")
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValueError(f"conv2d: weight must be [O,C,k,k], got shape {w.shape}")
        if w.shape[1] != x.shape[1]:
            raise ValueError(f"conv2d: weight expects {w.shape[1]} input channels, input has {x.shape[1]}")
        if b is not None and b.shape != (w.shape[0],):
            raise ValueError(f"conv2d: bias shape {b.shape} does not match {w.shape[0]} output channels")
        bsz, c, h, wd = x.shape
        o, k = w.shape[0], w.shape[2]
        pad = k // 2
        ho = (h + 2 * pad - k) // stride + 1
        wo = (wd + 2 * pad - k) // stride + 1
        wm = w.reshape(o, c * k * k)
        if k == 1 and stride == 1:
            cols = x.reshape(bsz, c, h * wd)
        else:
            xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
            cols = _conv_cols(xp, k, stride, ho, wo)
        out = np.matmul(wm, cols)
        if b is not None:
            out += b[:, None]
        ctx.update(cols=cols, wm=wm, xshape=x.shape, wshape=w.shape, stride=stride, ho=ho, wo=wo, has_b=b is not None)
        return out.reshape(bsz, o, ho, wo)

    @staticmethod
    def backward(ctx, g):
        cols, wm = ctx["cols"], ctx["wm"]
        bsz, c, h, wd = ctx["xshape"]
        o, _, k, _ = ctx["wshape"]
        s, ho, wo = ctx["stride"], ctx["ho"], ctx["wo"]
        g2 = g.reshape(bsz, o, ho * wo)
        gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(ctx["wshape"])
        gb = g2.sum(axis=(0, 2)) if ctx["has_b"] else None
        gcols = np.matmul(wm.T, g2)
        if k == 1 and s == 1:
            gx = gcols.reshape(bsz, c, h, wd)
        else:
            pad = k // 2
            gcols = gcols.reshape(bsz, c, k, k, ho, wo)
            gxp = np.zeros((bsz, c, h + 2 * pad, wd + 2 * pad), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += gcols[:, :, i, j]
            gx = np.ascontiguousarray(gxp[:, :, pad : pad + h, pad : pad + wd])
        return gx, gw, gb


class GlobalAvgPool(Function):
    name = "global_avg_pool"

    @staticmethod
    def forward(ctx, x):
        if x.ndim != 4:
            raise ValueError(f"global_avg_pool: input must be [B,C,H,W], got shape {x.shape}")
        ctx["shape"] = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    @staticmethod
    def backward(ctx, g):
        shape = ctx["shape"]
        return (np.broadcast_to(g / (shape[2] * shape[3]), shape).copy(),)


class LayerNorm(Function):
    """Normalise over the channel axis of each spatial token, then scale and shift."""

    name = "layer_norm"

    @staticmethod
    def forward(ctx, x, weight, bias, eps=1e-5):
        if x.ndim != 4 or weight.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
            raise ValueError(
                f"layer_norm: input {x.shape} needs weight/bias of shape ({x.shape[1]},), "
                f"got {weight.shape} and {bias.shape}"
            )
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        ctx.update(xhat=xhat, inv=inv, weight=weight)
        return xhat * weight[None, :, None, None] + bias[None, :, None, None]

    @staticmethod
    def backward(ctx, g):
        xhat, inv, weight = ctx["xhat"], ctx["inv"], ctx["weight"]
        gw = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gh = g * weight[None, :, None, None]
        gx = inv * (gh - gh.mean(axis=1, keepdims=True) - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        return gx, gw, gb


class Upsample2x(Function):
    """Nearest-neighbour upsampling by two on the last two axes."""

    name = "upsample2x"

    @staticmethod
    def forward(ctx, x):
        return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)

    @staticmethod
    def backward(ctx, g):
        *lead, h, w = g.shape
        return (g.reshape(*lead, h // 2, 2, w // 2, 2).sum(axis=(-3, -1)),)


class Downsample2x(Function):
    """2x2 average pooling on the last two axes."""

    name = "downsample2x"

    @staticmethod
    def forward(ctx, x):
        *lead, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"downsample2x: spatial dims {(h, w)} must be even")
        return x.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))

    @staticmethod
    def backward(ctx, g):
        return (np.repeat(np.repeat(g / 4.0, 2, axis=-2), 2, axis=-1),)


def reflect_indices(n: int, before: int, after: int) -> np.ndarray:
    """Source indices for reflect padding (edge not repeated), any pad width."""
    idx = np.arange(-before, n + after)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


class PadReflect(Function):
    """Reflect-pad the last two axes, implemented as a gather."""

    name = "pad_reflect"

    @staticmethod
    def forward(ctx, x, pads):
        top, bottom, left, right = pads
        h, w = x.shape[-2:]
        ih = reflect_indices(h, top, bottom)
        iw = reflect_indices(w, left, right)
        ctx.update(ih=ih, iw=iw, shape=x.shape)
        return x[..., ih[:, None], iw[None, :]]

    @staticmethod
    def backward(ctx, g):
        ih, iw, shape = ctx["ih"], ctx["iw"], ctx["shape"]
        sh = np.zeros((len(ih), shape[-2]), dtype=g.dtype)
        sh[np.arange(len(ih)), ih] = 1.0
        sw = np.zeros((len(iw), shape[-1]), dtype=g.dtype)
        sw[np.arange(len(iw)), iw] = 1.0
        return (sh.T @ g @ sw,)


# ---------------------------------------------------------------------------
# functional wrappers


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def power(x, exponent: float) -> Tensor:
    return Power.apply(x, exponent=exponent)


def absolute(x) -> Tensor:
    return Abs.apply(x)


def cos(x) -> Tensor:
    return Cos.apply(x)


def sin(x) -> Tensor:
    return Sin.apply(x)


def hypot(a, b) -> Tensor:
    return Hypot.apply(a, b)


def atan2(y, x) -> Tensor:
    return Atan2.apply(y, x)


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    return LeakyReLU.apply(x, slope=slope)


def sigmoid(x) -> Tensor:
    return Sigmoid.apply(x)


def softmax(x, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def take(table, index: np.ndarray) -> Tensor:
    return Take.apply(table, index=np.asarray(index, dtype=np.intp))


def conv2d(x, weight, bias=None, stride: int = 1) -> Tensor:
    return Conv2d.apply(x, weight, bias, stride=stride)


def global_avg_pool(x) -> Tensor:
    return GlobalAvgPool.apply(x)


def layer_norm(x, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    c = x.shape[1]
    dt = x.data.dtype if isinstance(x, Tensor) else _DTYPE
    weight = Tensor(np.ones(c, dtype=dt)) if weight is None else weight
    bias = Tensor(np.zeros(c, dtype=dt)) if bias is None else bias
    return LayerNorm.apply(x, weight, bias, eps=eps)


def upsample2x(x) -> Tensor:
    return Upsample2x.apply(x)


def downsample2x(x) -> Tensor:
    return Downsample2x.apply(x)


def pad_reflect(x, pads: tuple[int, int, int, int]) -> Tensor:
    if not any(pads):
        return as_tensor(x)
    return PadReflect.apply(x, pads=tuple(int(p) for p in pads))


def zeros(*shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DTYPE), requires_grad=requires_grad)


def randn(*shape, rng: np.random.Generator, requires_grad: bool = False) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)
