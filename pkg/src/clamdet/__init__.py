"""Dual-stream detector of synthetic music built on a small autograd engine."""

from ._core import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
