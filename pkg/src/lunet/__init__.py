"""LuNet: hierarchical 1D-CNN + LSTM network intrusion detection, built on a
from-scratch float64 tensor and autodiff stack."""

from .model import LuNetModel, LuNetSpec, build

__all__ = ["LuNetModel", "LuNetSpec", "build"]
__version__ = "0.1.0"
