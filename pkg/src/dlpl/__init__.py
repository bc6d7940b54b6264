"""Discrete latent perspective learning on a hand-written autodiff kernel."""
from .tensor import ConfigurationError, DimensionError, Tensor, gradcheck, no_grad

__all__ = ["Tensor", "DimensionError", "ConfigurationError", "gradcheck", "no_grad"]
__version__ = "0.1.0"
