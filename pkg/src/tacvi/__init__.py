"""Two-stage imputation network for partial multi-view, incomplete multi-label data."""
from tacvi.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
