"""Nighttime dehazing with spatial/frequency interaction blocks, on a numpy autodiff core."""

import os as _os

# BLAS thread count has to be fixed before numpy loads
_threads = _os.environ.get("SFSNID_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ[_var] = _threads

__version__ = "0.1.0"
