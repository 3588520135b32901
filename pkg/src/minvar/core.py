"""Backend selection for the batched solve kernels.

The compiled extension (``minvar._core``, Cython) is preferred when it
imported cleanly; the pure-NumPy module ``minvar._core_py`` is the fallback.
Set ``MINVAR_BACKEND=python`` or ``MINVAR_BACKEND=cython`` to force one
(forcing the compiled backend raises if it is unavailable).  Both backends
implement the same contract and are cross-checked by the parity tests.
"""
import os

from . import _core_py

_FORCED = os.environ.get("MINVAR_BACKEND", "").strip().lower()

if _FORCED == "python":
    _impl = _core_py
elif _FORCED == "cython":
    from . import _core as _impl  # noqa: F401  (ImportError is the contract)
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _core_py

BACKEND_NAME = _impl.BACKEND_NAME

batch_gmvp = _impl.batch_gmvp
batch_quadform = _impl.batch_quadform
batch_decision_grad = _impl.batch_decision_grad
