"""OneNet: U-Net style segmentation built from channel-wise 1D convolutions
and pixel (un)shuffling, with an analytical cost model and a numpy autograd."""

from .models import ModelConfig, build, config_hash
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = ["ModelConfig", "Tensor", "build", "config_hash", "__version__"]
