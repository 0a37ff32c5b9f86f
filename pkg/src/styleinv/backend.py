"""Convolution backend selection.

``STYLEINV_BACKEND`` picks the implementation:

- ``cython``: the compiled extension (error if it is not importable),
- ``numpy``: the pure fallback,
- ``auto`` (default): the extension when available, numpy otherwise.

Both backends implement the same contract and agree to float rounding;
each sample's reduction order is fixed within a backend, so per-sample
results never depend on batch size or chunking.
"""

from __future__ import annotations

import os

from . import _npkernels

_choice = os.environ.get("STYLEINV_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "cython", "numpy"):
    raise ValueError(f"STYLEINV_BACKEND must be auto, cython or numpy, got {_choice!r}")

_ck = None
if _choice in ("auto", "cython"):
    try:
        from . import _ckernels as _ck
    except ImportError:
        _ck = None
    if _choice == "cython" and _ck is None:
        raise ImportError("STYLEINV_BACKEND=cython but the compiled extension is not built")

if _ck is not None:
    name = "cython"
    conv2d_forward = _ck.conv2d_forward
    conv2d_backward_input = _ck.conv2d_backward_input
    conv2d_backward_weight = _ck.conv2d_backward_weight
else:
    name = "numpy"
    conv2d_forward = _npkernels.conv2d_forward
    conv2d_backward_input = _npkernels.conv2d_backward_input
    conv2d_backward_weight = _npkernels.conv2d_backward_weight

#: the pure implementation, importable regardless of selection (benchmarks,
#: cross-checks)
numpy_impl = _npkernels
cython_impl = _ck
