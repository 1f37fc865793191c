"""Arbitrary-time, arbitrary-scale space-time video super-resolution."""

from .errors import FormatError, UsageError
from .network import NetConfig, ScaleTimeQuery, USTVSRNet

__version__ = "0.1.0"

__all__ = ["FormatError", "NetConfig", "ScaleTimeQuery", "USTVSRNet", "UsageError"]
