"""Transform preview grids: sampled warps for every subgroup plus a tilt
sweep that shows the keystone (perspective) effect growing with the angle."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import images
from .groups import (
    GROUP_KINDS,
    EulerAngles,
    GroupSpec,
    Homography,
    camera_rotation_homography,
    sample_transform,
)
from .warp import build_warp

TILT_SWEEP_DEG = (0.0, 4.0, 8.0, 12.0, 16.0, 20.0)


def warp_image(h: Homography, img: np.ndarray) -> np.ndarray:
    table = build_warp(h, img.shape[1], img.shape[2])
    return table.apply(img)


def tilt_sweep(img: np.ndarray, degrees=TILT_SWEEP_DEG) -> list[np.ndarray]:
    """Warp ``img`` by increasing y-axis rotations about the image centre."""
    spec = GroupSpec(kind="pan_tilt", height=img.shape[1], width=img.shape[2])
    k = spec.base_intrinsics()
    out = []
    for deg in degrees:
        h = camera_rotation_homography(k, EulerAngles(theta_y=math.radians(deg)))
        out.append(warp_image(h, img))
    return out


def preview_grid(img: np.ndarray, seed: int, samples_per_kind: int = 3,
                 alpha: float = 1.0) -> np.ndarray:
    """One row per subgroup kind (identity tile first, then random samples),
    plus a final tilt-sweep row. Returns a (C, H_grid, W_grid) image."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E]))
    rows = []
    for kind in GROUP_KINDS:
        spec = GroupSpec(kind=kind, height=img.shape[1], width=img.shape[2],
                         range_fraction=alpha)
        tiles = [img.copy()]
        for _ in range(samples_per_kind):
            tiles.append(warp_image(sample_transform(spec, rng), img))
        rows.append(tiles)
    sweep = tilt_sweep(img)
    width = max(len(r) for r in rows + [sweep])
    rows.append(sweep[:width])
    return _assemble(rows, width)


def _assemble(rows: list[list[np.ndarray]], width: int, border: int = 2) -> np.ndarray:
    c, h, w = rows[0][0].shape
    grid = np.ones((c, len(rows) * (h + border) - border,
                    width * (w + border) - border))
    for r, tiles in enumerate(rows):
        for col, tile in enumerate(tiles):
            top = r * (h + border)
            left = col * (w + border)
            grid[:, top:top + h, left:left + w] = tile
    return grid


def preview_transforms(img: np.ndarray, out_path, seed: int = 0,
                       alpha: float = 1.0) -> Path:
    """Write the preview grid as an 8-bit PNG."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    grid = preview_grid(img, seed=seed, alpha=alpha)
    images.save_png8(out_path, grid)
    return out_path
