"""Brain MRI neoplasm classification with convolutional features and a cost-sensitive SVM."""
from .errors import ConvergenceError, FormatError, InvalidArgumentError

__version__ = "0.1.0"

__all__ = ["ConvergenceError", "FormatError", "InvalidArgumentError", "__version__"]
