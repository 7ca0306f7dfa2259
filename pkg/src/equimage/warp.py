"""Rasterized homography warps: bilinear resampling with reflection borders.

A warp is precomputed into a table of four source taps and weights per
output pixel, making it an explicit linear operator on images with an exact
adjoint (needed to backpropagate through the transform). Pixel i covers
[i, i+1) with its centre at i + 0.5, so a principal point at (W/2, H/2)
sits exactly at the image centre.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import reflect_fold
from .groups import EPS_W, Homography, inverse


@dataclass(frozen=True)
class WarpTable:
    """Gather table: output pixel p takes sum_k weights[k, p] * x.flat[idx[k, p]].

    Weights are nonnegative and sum to 1 per output pixel (a convex
    combination after reflection folding). Immutable; apply/adjoint are pure.
    """

    height: int
    width: int
    idx: np.ndarray       # (4, H*W) flat source indices
    weights: np.ndarray   # (4, H*W) bilinear weights

    def __post_init__(self):
        self.idx.setflags(write=False)
        self.weights.setflags(write=False)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return warp_apply(self, x)

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        return warp_adjoint(self, v)


def build_warp(h: Homography, height: int, width: int) -> WarpTable:
    """Precompute the resampling table realizing ``h`` on a height x width
    raster.

    Each output pixel centre is pulled back through the inverse transform;
    out-of-range source coordinates are folded in by reflection about pixel
    centres. Points pulled back to (near) infinity are clamped to a huge
    finite coordinate before folding, which keeps the table a well-defined
    convex combination everywhere.
    """
    hinv = inverse(h).m

    us, vs = np.meshgrid(
        np.arange(width, dtype=np.float64) + 0.5,
        np.arange(height, dtype=np.float64) + 0.5,
    )
    pts = np.stack([us.ravel(), vs.ravel(), np.ones(height * width)])
    src = hinv @ pts

    w = src[2]
    sign = np.where(w >= 0.0, 1.0, -1.0)
    w = sign * np.maximum(np.abs(w), EPS_W)
    tx = src[0] / w - 0.5
    ty = src[1] / w - 0.5

    tx = reflect_fold(tx, width)
    ty = reflect_fold(ty, height)

    x0 = np.floor(tx)
    y0 = np.floor(ty)
    fx = tx - x0
    fy = ty - y0
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)

    idx = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1])
    weights = np.stack(
        [(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx]
    )
    return WarpTable(height=height, width=width, idx=idx, weights=weights)


def warp_apply(table: WarpTable, x: np.ndarray) -> np.ndarray:
    """Apply the warp to a (C, H, W) image: per-channel weighted gather."""
    x = np.asarray(x)
    _check_dims(table, x)
    c = x.shape[0]
    flat = x.reshape(c, -1)
    wts = table.weights.astype(x.dtype, copy=False)
    out = np.zeros_like(flat)
    for k in range(4):
        out += flat[:, table.idx[k]] * wts[k]
    return out.reshape(x.shape)


def warp_adjoint(table: WarpTable, v: np.ndarray) -> np.ndarray:
    """Transpose of :func:`warp_apply`: weighted scatter-add back to sources."""
    v = np.asarray(v)
    _check_dims(table, v)
    c = v.shape[0]
    n = table.height * table.width
    flat = v.reshape(c, -1)
    wts = table.weights.astype(v.dtype, copy=False)
    out = np.zeros((c, n), dtype=v.dtype)
    for k in range(4):
        contrib = flat * wts[k]
        for ch in range(c):
            out[ch] += np.bincount(table.idx[k], weights=contrib[ch], minlength=n).astype(
                v.dtype, copy=False
            )
    return out.reshape(v.shape)


def _check_dims(table: WarpTable, x: np.ndarray) -> None:
    if x.ndim != 3 or x.shape[1] != table.height or x.shape[2] != table.width:
        raise ValueError(
            f"image shape {x.shape} does not match warp table "
            f"(C, {table.height}, {table.width})"
        )
