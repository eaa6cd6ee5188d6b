"""Occlusion-map and attention-map renderings.

Occlusion legend: the blend weights frame 1 by V, so V -> 0 marks pixels
hidden in frame 1 (blue), V -> 1 pixels hidden in frame 2 (red), and
V = 0.5 equal contribution (green).
"""
from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .model import Model
from .pipeline import interpolate

logger = logging.getLogger(__name__)

BLUE, GREEN, RED = (0, 0, 255), (0, 255, 0), (255, 0, 0)
OCCLUSION_STOPS = ((0.0, BLUE), (0.5, GREEN), (1.0, RED))
ATTENTION_STOPS = ((0.0, BLUE), (0.5, GREEN), (1.0, RED))
OCCLUSION_LEGEND = "blue: occluded in frame 1 (V=0); green: no occlusion (V=0.5); red: occluded in frame 2 (V=1)"
ATTENTION_LEGEND = "blue: low attention; red: high attention"
DEGENERATE_RTOL = 1e-5


def apply_ramp(values: np.ndarray, stops=OCCLUSION_STOPS) -> np.ndarray:
    """Piecewise-linear color ramp; ``values`` in [0, 1] -> (..., 3) uint8."""
    pos = np.array([s[0] for s in stops])
    cols = np.array([s[1] for s in stops], dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    rgb = np.stack([np.interp(v, pos, cols[:, c]) for c in range(3)], axis=-1)
    return np.floor(rgb + 0.5).astype(np.uint8)


def render_occlusion(occlusion) -> np.ndarray:
    v = occlusion.data if isinstance(occlusion, T.Tensor) else np.asarray(occlusion)
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 4:
        v = v[0, 0]
    if v.min(initial=0.0) < 0 or v.max(initial=0.0) > 1:
        logger.warning("occlusion map outside [0, 1]; clamping")
        v = np.clip(v, 0, 1)
    return apply_ramp(v, OCCLUSION_STOPS)


def select_attention_channel(psi: np.ndarray) -> int:
    """Index of the channel with the largest spatial-mean activation."""
    return int(np.argmax(psi.mean(axis=(-2, -1))))


def attention_map(psi: np.ndarray, height: int, width: int) -> np.ndarray:
    """Normalized [0, 1] map of the top channel at (height, width)."""
    psi = np.asarray(psi, dtype=np.float64)
    plane = psi[select_attention_channel(psi)]
    lo, hi = plane.min(), plane.max()
    # spreads at float32 rounding level count as constant
    if hi - lo > DEGENERATE_RTOL * max(abs(lo), abs(hi), 1.0):
        norm = (plane - lo) / (hi - lo)
    else:
        norm = np.full_like(plane, 0.5)
    with T.no_grad():
        up = T.upsample_bilinear2(T.Tensor(norm[None, None])).data[0, 0]
    return np.clip(up[:height, :width], 0.0, 1.0)


def render_attention(model: Model, frame1: np.ndarray, frame2: np.ndarray,
                     output_image: np.ndarray | None = None, alpha: float = 0.5) -> np.ndarray:
    """Overlay the highest-scoring decoder feature map on the interpolated frame."""
    out, field = interpolate(model, frame1, frame2, return_field=True)
    if output_image is None:
        output_image = out
    H, W = output_image.shape[:2]
    heat = apply_ramp(attention_map(field.psi.data[0], H, W), ATTENTION_STOPS)
    mixed = alpha * heat.astype(np.float64) + (1 - alpha) * output_image.astype(np.float64)
    return np.floor(mixed + 0.5).astype(np.uint8)


def occlusion_for(model: Model, frame1: np.ndarray, frame2: np.ndarray) -> np.ndarray:
    H, W = np.asarray(frame1).shape[:2]
    _, field = interpolate(model, frame1, frame2, return_field=True)
    return render_occlusion(field.occlusion.data[0, 0, :H, :W])


def montage(*images: np.ndarray) -> np.ndarray:
    """Side-by-side strip of equally sized images."""
    return np.concatenate([np.asarray(im, dtype=np.uint8) for im in images], axis=1)
