"""Adaptive collaboration-of-flows warp.

For each output pixel (i, j) the warp takes an F x F grid of taps spaced by
the dilation d, displaces every tap by its own real-valued offset and sums
bilinear samples weighted by per-pixel kernel weights::

    out(i, j) = sum_{k,l} W_kl(i,j) * I(i + d*k + alpha_kl(i,j), j + d*l + beta_kl(i,j))

``alpha`` moves along rows, ``beta`` along columns. The image passed in is
already replication-padded by ``d * (F - 1) // 2`` so the central tap with
zero offset reads the source pixel itself. Sample coordinates are clamped to
the padded image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import OpError, Tensor


@dataclass
class WarpParams:
    weight: Tensor
    alpha: Tensor
    beta: Tensor
    kernel_size: int = 5
    dilation: int = 1

    @property
    def pad(self) -> int:
        return self.dilation * (self.kernel_size - 1) // 2


def _validate(image: Tensor, params: WarpParams, op: str) -> tuple[int, int, int, int]:
    F, d = params.kernel_size, params.dilation
    if F < 1 or F % 2 == 0 or d < 1:
        raise OpError(op, f"kernel size must be odd and dilation >= 1, got F={F}, d={d}")
    shapes = {t.shape for t in (params.weight, params.alpha, params.beta)}
    if len(shapes) != 1:
        raise OpError(op, f"weight/alpha/beta shapes differ: {sorted(shapes)}")
    N, taps, H, W = params.weight.shape
    if taps != F * F:
        raise OpError(op, f"expected {F * F} tap channels, got {taps}")
    p = params.pad
    if image.data.ndim != 4 or image.shape[0] != N or image.shape[2:] != (H + 2 * p, W + 2 * p):
        raise OpError(op, f"padded image {image.shape} inconsistent with field {params.weight.shape} "
                          f"for F={F}, d={d}")
    return N, H, W, p


def _tap_coords(alpha, beta, t, F, d, Hp, Wp):
    """Clamped bilinear corners and fractions for tap ``t`` of every pixel."""
    k, l = divmod(t, F)
    N, _, H, W = alpha.shape
    y = np.arange(H, dtype=alpha.dtype)[:, None] + alpha[:, t] + d * k
    x = np.arange(W, dtype=alpha.dtype)[None, :] + beta[:, t] + d * l
    in_y = (y >= 0) & (y < Hp - 1)
    in_x = (x >= 0) & (x < Wp - 1)
    y = np.clip(y, 0, Hp - 1)
    x = np.clip(x, 0, Wp - 1)
    y0 = np.floor(y)
    x0 = np.floor(x)
    ty = y - y0
    tx = x - x0
    y0 = y0.astype(np.intp)
    x0 = x0.astype(np.intp)
    dy = np.where(y0 < Hp - 1, Wp, 0)
    dx = (x0 < Wp - 1).astype(np.intp)
    i00 = (np.arange(N) * (Hp * Wp))[:, None, None] + y0 * Wp + x0
    corners = (i00, i00 + dx, i00 + dy, i00 + dy + dx)
    return corners, ty, tx, in_y, in_x


def adacof_warp(image: Tensor, params: WarpParams) -> Tensor:
    """Warp a padded (N, C, H+2p, W+2p) image into (N, C, H, W)."""
    N, H, W, _ = _validate(image, params, "adacof_warp")
    F, d = params.kernel_size, params.dilation
    C, Hp, Wp = image.shape[1:]
    dt = image.dtype
    # channel planes over the flattened (n, y, x) index space
    planes = np.ascontiguousarray(image.data.transpose(1, 0, 2, 3)).reshape(C, N * Hp * Wp)
    wgt = params.weight.data.astype(dt, copy=False)
    alpha = params.alpha.data.astype(dt, copy=False)
    beta = params.beta.data.astype(dt, copy=False)

    out = np.zeros((C, N, H, W), dtype=dt)
    for t in range(F * F):
        (i00, i01, i10, i11), ty, tx, _, _ = _tap_coords(alpha, beta, t, F, d, Hp, Wp)
        s = ((1 - ty) * ((1 - tx) * planes[:, i00] + tx * planes[:, i01])
             + ty * ((1 - tx) * planes[:, i10] + tx * planes[:, i11]))
        out += wgt[:, t] * s

    def backward(g):
        g = g.transpose(1, 0, 2, 3)  # (C, N, H, W)
        g_w = np.empty_like(wgt)
        g_a = np.empty_like(alpha)
        g_b = np.empty_like(beta)
        size = N * Hp * Wp
        g_img = np.zeros(C * size, dtype=np.float64)
        offs = (np.arange(C) * size)[:, None, None, None]
        for t in range(F * F):
            corners, ty, tx, in_y, in_x = _tap_coords(alpha, beta, t, F, d, Hp, Wp)
            v00, v01, v10, v11 = (planes[:, c] for c in corners)
            s = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11)
            g_w[:, t] = (g * s).sum(axis=0)
            wg = wgt[:, t] * g
            g_a[:, t] = (wg * ((1 - tx) * (v10 - v00) + tx * (v11 - v01))).sum(axis=0) * in_y
            g_b[:, t] = (wg * ((1 - ty) * (v01 - v00) + ty * (v11 - v10))).sum(axis=0) * in_x
            cw = ((1 - ty) * (1 - tx), (1 - ty) * tx, ty * (1 - tx), ty * tx)
            idx = np.concatenate([(c + offs).reshape(-1) for c in corners])
            val = np.concatenate([(wg * w).reshape(-1) for w in cw])
            g_img += np.bincount(idx, weights=val, minlength=g_img.size)
        g_img = g_img.astype(dt).reshape(C, N, Hp, Wp).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(g_img), g_w, g_a, g_b

    result = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    return Tensor._from_op(result, (image, params.weight, params.alpha, params.beta), backward,
                           "adacof_warp")


def adacof_warp_reference(image: Tensor, params: WarpParams) -> Tensor:
    """Loop-by-loop evaluation of the warp; slow, for testing only."""
    N, H, W, _ = _validate(image, params, "adacof_warp_reference")
    F, d = params.kernel_size, params.dilation
    C, Hp, Wp = image.shape[1:]
    img = image.data.astype(np.float64)
    wgt = params.weight.data
    alpha = params.alpha.data
    beta = params.beta.data
    out = np.zeros((N, C, H, W))
    for n in range(N):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    acc = 0.0
                    for k in range(F):
                        for l in range(F):
                            t = k * F + l
                            y = min(max(i + d * k + float(alpha[n, t, i, j]), 0.0), Hp - 1.0)
                            x = min(max(j + d * l + float(beta[n, t, i, j]), 0.0), Wp - 1.0)
                            sample = 0.0
                            # tent-weighted sum over the integer neighbourhood
                            for py in range(max(math.floor(y) - 1, 0), min(math.floor(y) + 2, Hp - 1) + 1):
                                wy = max(0.0, 1.0 - abs(y - py))
                                if wy == 0.0:
                                    continue
                                for px in range(max(math.floor(x) - 1, 0), min(math.floor(x) + 2, Wp - 1) + 1):
                                    wx = max(0.0, 1.0 - abs(x - px))
                                    if wx:
                                        sample += wy * wx * img[n, c, py, px]
                            acc += float(wgt[n, t, i, j]) * sample
                    out[n, c, i, j] = acc
    return Tensor(out.astype(image.dtype))
