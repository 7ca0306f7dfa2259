"""Raster file I/O: 8/16-bit PNG for display and masks, uncompressed
multi-frame float32 TIFF for measurements and references.

Arrays are channel-first (C, H, W) floats; display output clips to [0, 1].
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def save_tiff(path, array: np.ndarray) -> None:
    """Write a (C, H, W) float array as an uncompressed multi-frame float32
    TIFF, one frame per channel."""
    array = np.asarray(array, dtype=np.float32)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3:
        raise ValueError(f"expected (C, H, W), got shape {array.shape}")
    frames = [Image.fromarray(array[c], mode="F") for c in range(array.shape[0])]
    frames[0].save(
        Path(path), format="TIFF", save_all=True, append_images=frames[1:],
        compression=None,
    )


def load_tiff(path) -> np.ndarray:
    """Read a multi-frame TIFF back into a (C, H, W) float32 array."""
    with Image.open(Path(path)) as img:
        frames = []
        for frame in range(getattr(img, "n_frames", 1)):
            img.seek(frame)
            frames.append(np.asarray(img, dtype=np.float32))
    return np.stack(frames)


def save_png8(path, array: np.ndarray) -> None:
    """Write an image as 8-bit PNG. Multichannel input shows its first three
    channels (or one, for single-channel); values clip to [0, 1]."""
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3:
        raise ValueError(f"expected (C, H, W), got shape {array.shape}")
    quantized = np.round(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8)
    if quantized.shape[0] == 1:
        img = Image.fromarray(quantized[0], mode="L")
    elif quantized.shape[0] == 2:
        img = Image.fromarray(quantized[0], mode="L")
    else:
        img = Image.fromarray(np.moveaxis(quantized[:3], 0, -1), mode="RGB")
    img.save(Path(path), format="PNG")


def save_mask_png(path, mask: np.ndarray) -> None:
    """Persist a binary keep-mask as an 8-bit PNG (255 = kept)."""
    mask = np.asarray(mask)
    img = Image.fromarray((mask > 0.5).astype(np.uint8) * 255, mode="L")
    img.save(Path(path), format="PNG")


def load_mask_png(path) -> np.ndarray:
    with Image.open(Path(path)) as img:
        arr = np.asarray(img.convert("L"))
    return (arr > 127).astype(np.float64)


def load_image(path) -> np.ndarray:
    """Read a PNG or TIFF into (C, H, W) floats scaled to [0, 1].

    8-bit and 16-bit integer files are scaled by their type range;
    float TIFF frames are taken as-is.
    """
    path = Path(path)
    if path.suffix.lower() in (".tif", ".tiff"):
        with Image.open(path) as img:
            if img.mode == "F" or getattr(img, "n_frames", 1) > 1:
                return load_tiff(path)
            arr = np.asarray(img)
    else:
        with Image.open(path) as img:
            arr = np.asarray(img)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    elif arr.dtype == np.uint16:
        arr = arr.astype(np.float64) / 65535.0
    elif arr.dtype.kind in ("i", "u"):
        arr = arr.astype(np.float64) / float(np.iinfo(arr.dtype).max)
    else:
        arr = arr.astype(np.float64)
    if arr.ndim == 2:
        return arr[None]
    return np.moveaxis(arr, -1, 0)
