"""Simultaneous surrogate learning and optimal control of elliptic systems under uncertainty."""

__version__ = "0.1.0"

from . import errors, fem

__all__ = ["errors", "fem", "__version__"]
