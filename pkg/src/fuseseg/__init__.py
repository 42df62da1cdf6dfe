"""Two-stream boundary-aware semantic segmentation with an attention fusion gate."""

from .tensor import Tensor, ShapeError, NonFiniteError, dtype_for

__version__ = "0.1.0"

__all__ = ["Tensor", "ShapeError", "NonFiniteError", "dtype_for", "__version__"]
