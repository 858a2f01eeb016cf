"""Hand depth estimation from single RGB images.

A stacked hourglass network with staged mask/depth supervision, the
RGB-D ground-truth construction feeding it, training and evaluation
machinery, and a synthetic aligned RGB-D corpus for desk-scale runs.
"""

from .errors import ConfigError, DataError, HandDepthError, NumericalError, ShapeError, UsageError
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "no_grad",
    "HandDepthError",
    "ShapeError",
    "ConfigError",
    "DataError",
    "NumericalError",
    "UsageError",
    "__version__",
]
