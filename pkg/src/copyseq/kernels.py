"""Backend selection for the hot kernels.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy versions in ``_kernels_py`` are used. Setting ``COPYSEQ_PURE_PYTHON=1``
forces the numpy backend. Callers always go through this module's attributes
so that :func:`use_backend` takes effect everywhere.
"""
import os

import numpy as np

from copyseq import _kernels_py

try:
    from copyseq import _ckernels
except ImportError:  # extension not built
    _ckernels = None

NAMES = (
    "gru_fwd_zr",
    "gru_fwd_out",
    "gru_bwd_out",
    "gru_bwd_r",
    "log_softmax_fwd",
    "log_softmax_bwd",
    "logsumexp_fwd",
    "logsumexp_bwd",
    "scatter_add_rows",
    "selective_fwd",
    "selective_bwd",
    "mixture_scatter",
)

BACKEND = None


def available_backends():
    return ["cython", "python"] if _ckernels is not None else ["python"]


def use_backend(name):
    """Switch every kernel to ``"cython"`` or ``"python"``."""
    global BACKEND
    if name == "cython":
        if _ckernels is None:
            raise ImportError("copyseq._ckernels is not built; run `pip install -e .`")
        mod = _ckernels
    elif name == "python":
        mod = _kernels_py
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    g = globals()
    for fn in NAMES:
        g[fn] = getattr(mod, fn)
    BACKEND = name


def as_c(a, dtype=None):
    return np.ascontiguousarray(a, dtype=dtype)


if _ckernels is not None and not os.environ.get("COPYSEQ_PURE_PYTHON"):
    use_backend("cython")
else:
    use_backend("python")
