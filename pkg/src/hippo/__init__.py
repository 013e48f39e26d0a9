"""Hierarchical multi-granular pronunciation assessment on synthetic data,
built on a small reverse-mode autodiff engine."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward  # noqa: F401
from .model import ModelConfig, ModelInputs, forward, init_params  # noqa: F401
