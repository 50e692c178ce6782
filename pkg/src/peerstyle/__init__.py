"""Arbitrary style transfer by two-stage peer-regularized feature recombination."""

from ._kernels import BACKEND
from .config import TrainConfig
from .model import StyleTransferModel
from .nn import LatentCode, NetConfig
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = ["BACKEND", "LatentCode", "NetConfig", "StyleTransferModel", "Tensor", "TrainConfig", "__version__"]
