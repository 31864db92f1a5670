"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``TACVI_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from tacvi import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("TACVI_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from tacvi import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

masked_bce = _impl.masked_bce
compression = _impl.compression
row_sq_error = _impl.row_sq_error
ap_rows = _impl.ap_rows
rank_loss_rows = _impl.rank_loss_rows
auc_cols = _impl.auc_cols

__all__ = ["BACKEND", "masked_bce", "compression", "row_sq_error",
           "ap_rows", "rank_loss_rows", "auc_cols"]
