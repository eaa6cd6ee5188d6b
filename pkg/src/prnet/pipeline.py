"""Frame synthesis: pad, predict kernel fields, warp both frames, blend, crop."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .adacof import WarpParams, adacof_warp
from .model import KernelField, Model, forward_features
from .tensor import OpError, Tensor

__all__ = ["KernelField", "blend", "interpolate", "interpolate_tensor", "to_tensor", "to_image",
           "quantize"]


def blend(warped1: Tensor, warped2: Tensor, occlusion: Tensor) -> Tensor:
    """``V * warped1 + (1 - V) * warped2`` with V (N,1,H,W) shared across channels."""
    T._check_rank4("blend", warped1, warped2, occlusion)
    if warped1.shape != warped2.shape:
        raise OpError("blend", f"warped frames differ: {warped1.shape} vs {warped2.shape}")
    N, _, H, W = warped1.shape
    if occlusion.shape != (N, 1, H, W):
        raise OpError("blend", f"occlusion map {occlusion.shape} does not match {warped1.shape}")
    v = occlusion.data
    a, b = warped1.data, warped2.data
    out = v * a + (1 - v) * b

    def backward(g):
        return g * v, g * (1 - v), (g * (a - b)).sum(axis=1, keepdims=True)

    return Tensor._from_op(out, (warped1, warped2, occlusion), backward, "blend")


def _pad_amounts(size: int, multiple: int) -> int:
    return (-size) % multiple


def interpolate_tensor(model: Model, frame1: Tensor, frame2: Tensor,
                       return_field: bool = False):
    """Differentiable midpoint synthesis on (N,3,H,W) float frames in [0, 1].

    Frames are edge-padded on the bottom/right to the model's size multiple
    and the result is cropped back; no clamping or quantization happens here.
    """
    T._check_rank4("interpolate", frame1, frame2)
    if frame1.shape != frame2.shape:
        raise OpError("interpolate", f"frame sizes differ: {frame1.shape} vs {frame2.shape}")
    H, W = frame1.shape[2:]
    if H < 8 or W < 8:
        raise OpError("interpolate", f"frames must be at least 8x8, got {H}x{W}")
    cfg = model.config
    ph, pw = _pad_amounts(H, cfg.size_multiple), _pad_amounts(W, cfg.size_multiple)
    if ph or pw:
        frame1 = T.replication_pad(frame1, 0, pw, 0, ph)
        frame2 = T.replication_pad(frame2, 0, pw, 0, ph)
    field = forward_features(model, frame1, frame2)
    F, d = cfg.kernel_size, cfg.dilation
    p = d * (F - 1) // 2
    warped1 = adacof_warp(T.replication_pad(frame1, p, p, p, p),
                          WarpParams(field.weight1, field.alpha1, field.beta1, F, d))
    warped2 = adacof_warp(T.replication_pad(frame2, p, p, p, p),
                          WarpParams(field.weight2, field.alpha2, field.beta2, F, d))
    out = blend(warped1, warped2, field.occlusion)
    if ph or pw:
        out = T.crop(out, 0, 0, H, W)
    return (out, field) if return_field else out


def to_tensor(*images: np.ndarray, dtype=None) -> Tensor:
    """Stack (H,W,3) uint8 images into an (N,3,H,W) tensor scaled to [0, 1]."""
    dtype = dtype or T.get_default_dtype()
    arr = np.stack([np.asarray(im) for im in images]).astype(dtype) / dtype(255)
    return Tensor(arr.transpose(0, 3, 1, 2))


def quantize(x: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half away from zero onto 0..255."""
    scaled = np.clip(x.astype(np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def to_image(t: Tensor, index: int = 0) -> np.ndarray:
    return quantize(t.data[index].transpose(1, 2, 0))


def interpolate(model: Model, frame1: np.ndarray, frame2: np.ndarray,
                return_field: bool = False):
    """Synthesize the midpoint of two (H,W,3) uint8 frames as a uint8 image."""
    frame1, frame2 = np.asarray(frame1), np.asarray(frame2)
    if frame1.shape != frame2.shape:
        raise OpError("interpolate", f"frame sizes differ: {frame1.shape} vs {frame2.shape}")
    if frame1.ndim != 3 or frame1.shape[2] != 3:
        raise OpError("interpolate", f"expected (H,W,3) RGB frames, got {frame1.shape}")
    with T.no_grad():
        f1 = to_tensor(frame1, dtype=model.dtype)
        f2 = to_tensor(frame2, dtype=model.dtype)
        out, field = interpolate_tensor(model, f1, f2, return_field=True)
    img = to_image(out)
    return (img, field) if return_field else img
