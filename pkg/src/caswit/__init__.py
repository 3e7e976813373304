"""Dual-branch HR/LR Swin segmentation with cross-attention context fusion, on a numpy autodiff core."""

from .config import RunConfig, load_config
from .model import CASWiT, DualEncoder, ModelConfig, SwinUPerNet
from .ssl import MaskSpec, SSLModel
from .tensor import Tensor, no_grad, precision

__all__ = [
    "CASWiT", "DualEncoder", "MaskSpec", "ModelConfig", "RunConfig", "SSLModel", "SwinUPerNet", "Tensor",
    "load_config", "no_grad", "precision",
]
__version__ = "0.1.0"
