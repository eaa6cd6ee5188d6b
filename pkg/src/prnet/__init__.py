"""Parameter-reduced multi-encoder kernel-based frame interpolation in NumPy."""
from .adacof import WarpParams, adacof_warp, adacof_warp_reference
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import (KernelField, Model, ModelConfig, build, count_params, forward_features,
                    fuse_features, reduction_percent)
from .pipeline import blend, interpolate, interpolate_tensor
from .tensor import Tensor, grad_check, no_grad

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "KernelField", "Model", "ModelConfig", "Tensor", "WarpParams",
    "adacof_warp", "adacof_warp_reference", "blend", "build", "count_params",
    "forward_features", "fuse_features", "grad_check", "interpolate", "interpolate_tensor",
    "load_checkpoint", "no_grad", "reduction_percent", "save_checkpoint",
]
