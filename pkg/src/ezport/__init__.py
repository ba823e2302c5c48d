"""Recursive-utility actor-critic portfolio allocation."""
from .utility import EZParams

__version__ = "0.1.0"
__all__ = ["EZParams", "__version__"]
