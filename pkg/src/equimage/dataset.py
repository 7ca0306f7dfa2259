"""Dataset simulation: tiling source images, applying the forward physics
and noise with per-tile deterministic RNG streams, and the train/test
manifest. Also provides a synthetic scene generator so demos and tests can
run without any external imagery.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import images
from .physics import (
    InpaintingOperator,
    NoiseModel,
    PansharpeningOperator,
    apply_noise,
    pansharpen_apply,
    random_mask,
)

SOURCE_SUFFIXES = (".png", ".tif", ".tiff")


def generate_scene(rng: np.random.Generator, size: int, channels: int,
                   structures: int = 14, textures: int = 5) -> np.ndarray:
    """Synthetic edge-rich scene: a smooth background plus random rectangles,
    disks and bars, plus fine-scale striped texture patches. Geometry is
    shared across channels but every structure carries independent
    per-channel amplitudes, so the channel average (a pan-like band) does not
    determine the per-channel detail.

    Values lie in [0, 1]. The mix of sharp edges, fine texture and spectral
    diversity is what makes the nullspace-recovery demos non-trivial.
    """
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    yy = yy / size
    xx = xx / size

    img = np.zeros((channels, size, size))
    for c in range(channels):
        gx, gy = rng.uniform(-0.5, 0.5, 2)
        img[c] = 0.35 + gx * (xx - 0.5) + gy * (yy - 0.5)

    def channel_gains():
        # one shared sign with independent per-channel magnitudes: bands stay
        # structurally correlated (local similarity is gain-invariant), but
        # the band average does not determine the per-band amplitudes
        return rng.uniform(0.3, 1.0, channels) * rng.choice([-1.0, 1.0])

    for _ in range(structures):
        gain = channel_gains()
        shape_kind = rng.integers(0, 3)
        if shape_kind == 0:  # rectangle
            h = rng.integers(size // 10, size // 2)
            w = rng.integers(size // 10, size // 2)
            top = rng.integers(0, size - h)
            left = rng.integers(0, size - w)
            patch = np.zeros((size, size))
            patch[top:top + h, left:left + w] = 1.0
        elif shape_kind == 1:  # disk
            r = rng.integers(size // 12, size // 4)
            cy = rng.integers(r, size - r)
            cx = rng.integers(r, size - r)
            patch = ((yy * size - cy) ** 2 + (xx * size - cx) ** 2 <= r * r).astype(float)
        else:  # oriented bar
            angle = rng.uniform(0, np.pi)
            offset = rng.uniform(0.2, 0.8)
            width = rng.uniform(0.01, 0.05)
            proj = np.cos(angle) * xx + np.sin(angle) * yy
            patch = (np.abs(proj - offset) < width).astype(float)
        amplitude = rng.uniform(0.15, 0.4)
        for c in range(channels):
            img[c] += amplitude * gain[c] * patch

    for _ in range(textures):
        # mid-frequency oriented stripes inside a window: detail that the
        # anti-aliased downsampling attenuates heavily (but the pan band
        # keeps), i.e. genuine operator-nullspace content
        gain = channel_gains()
        h = rng.integers(size // 4, size // 2)
        w = rng.integers(size // 4, size // 2)
        top = rng.integers(0, size - h)
        left = rng.integers(0, size - w)
        period = rng.uniform(10.0, 18.0)
        angle = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        proj = np.cos(angle) * xx * size + np.sin(angle) * yy * size
        stripes = 0.5 * (1.0 + np.sin(2 * np.pi * proj / period + phase))
        window = np.zeros((size, size))
        window[top:top + h, left:left + w] = 1.0
        amplitude = rng.uniform(0.2, 0.45)
        for c in range(channels):
            img[c] += amplitude * gain[c] * stripes * window

    img = ndimage.gaussian_filter(img, sigma=(0, 0.6, 0.6), mode="mirror")
    lo = img.min()
    hi = img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)
    return 0.05 + 0.9 * img


def write_demo_corpus(directory, count: int, size: int, channels: int, seed: int) -> list[Path]:
    """Write ``count`` synthetic source images (multi-frame TIFF) for demos."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        scene = generate_scene(rng, size, channels)
        path = directory / f"scene_{i:04d}.tiff"
        images.save_tiff(path, scene)
        paths.append(path)
    return paths


@dataclass(frozen=True)
class TileRecord:
    tile_id: str
    split: str                    # "train" | "test"
    files: dict                   # role -> relative path


@dataclass(frozen=True)
class DatasetManifest:
    task: str
    root: Path
    tiles: tuple[TileRecord, ...]

    def split(self, name: str) -> list[TileRecord]:
        return [t for t in self.tiles if t.split == name]

    def path(self, tile: TileRecord, role: str) -> Path:
        return self.root / tile.files[role]


def save_manifest(manifest: DatasetManifest, path: Path) -> None:
    payload = {
        "task": manifest.task,
        "tiles": [
            {"id": t.tile_id, "split": t.split, "files": t.files}
            for t in manifest.tiles
        ],
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    payload = json.loads(path.read_text())
    tiles = tuple(
        TileRecord(tile_id=t["id"], split=t["split"], files=t["files"])
        for t in payload["tiles"]
    )
    ids = [t.tile_id for t in tiles]
    if len(set(ids)) != len(ids):
        raise ValueError("manifest contains duplicate tile ids")
    return DatasetManifest(task=payload["task"], root=path.parent, tiles=tiles)


def list_source_images(source_dir) -> list[Path]:
    source_dir = Path(source_dir)
    if not source_dir.is_dir():
        raise FileNotFoundError(f"source directory {source_dir} does not exist")
    paths = sorted(p for p in source_dir.iterdir() if p.suffix.lower() in SOURCE_SUFFIXES)
    if not paths:
        raise FileNotFoundError(f"no PNG/TIFF images found in {source_dir}")
    return paths


def center_crop(img: np.ndarray, size: int) -> np.ndarray:
    c, h, w = img.shape
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than tile size {size}")
    top = (h - size) // 2
    left = (w - size) // 2
    return img[:, top:top + size, left:left + size]


def tile_rng(seed: int, tile_index: int) -> np.random.Generator:
    """Deterministic per-tile stream derived from (global seed, tile index)."""
    return np.random.default_rng(np.random.SeedSequence([seed, tile_index]))


def simulate_dataset(cfg) -> DatasetManifest:
    """Run the forward physics over the source corpus and write measurements,
    per-tile operators and the manifest under ``cfg.output_dir / 'data'``.

    Tiles are split into train/test by a seeded shuffle; the split is
    disjoint by construction. Reruns with the same config and seed are
    byte-identical.
    """
    data_dir = Path(cfg.output_dir) / "data"
    data_dir.mkdir(parents=True, exist_ok=True)

    sources = list_source_images(cfg.dataset.source_dir)
    if cfg.dataset.tile_count is not None:
        if cfg.dataset.tile_count > len(sources):
            raise ValueError(
                f"requested {cfg.dataset.tile_count} tiles but only "
                f"{len(sources)} source images are available"
            )
        sources = sources[: cfg.dataset.tile_count]

    order = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xD5])).permutation(
        len(sources)
    )
    n_train = int(round(cfg.dataset.train_fraction * len(sources)))
    n_train = min(max(n_train, 1), len(sources) - 1) if len(sources) > 1 else len(sources)
    split_of = {}
    for rank, src_index in enumerate(order):
        split_of[int(src_index)] = "train" if rank < n_train else "test"

    noise = cfg.noise_model()
    records = []
    for index, source in enumerate(sources):
        tile_id = f"tile_{index:04d}"
        rng = tile_rng(cfg.seed, index)
        img = center_crop(images.load_image(source), cfg.dataset.tile_size)
        if img.shape[0] < cfg.dataset.channels:
            raise ValueError(
                f"{source} has {img.shape[0]} channels, config needs {cfg.dataset.channels}"
            )
        img = img[: cfg.dataset.channels]

        files = {}
        if cfg.task == "inpainting":
            op = random_mask(cfg.operator.mask_fraction, cfg.dataset.tile_size,
                             cfg.dataset.tile_size, rng)
            y = apply_noise(noise, op.apply(img), rng)
            files["y"] = f"{tile_id}_y.tiff"
            files["mask"] = f"{tile_id}_mask.png"
            images.save_tiff(data_dir / files["y"], y)
            images.save_mask_png(data_dir / files["mask"], op.mask)
        else:
            op = cfg.pansharpen_operator()
            pair = pansharpen_apply(op, img)
            y_ms = apply_noise(noise, pair.ms, rng)
            y_pan = apply_noise(noise, pair.pan, rng)
            files["ms"] = f"{tile_id}_ms.tiff"
            files["pan"] = f"{tile_id}_pan.tiff"
            images.save_tiff(data_dir / files["ms"], y_ms)
            images.save_tiff(data_dir / files["pan"], y_pan)

        if cfg.dataset.keep_reference:
            files["reference"] = f"{tile_id}_ref.tiff"
            images.save_tiff(data_dir / files["reference"], img)

        records.append(TileRecord(tile_id=tile_id, split=split_of[index], files=files))

    manifest = DatasetManifest(task=cfg.task, root=data_dir, tiles=tuple(records))
    save_manifest(manifest, data_dir / "manifest.json")
    return manifest


def load_tile_measurement(manifest: DatasetManifest, tile: TileRecord, task: str):
    """Load the measurement payload for one tile (plus its operator inputs)."""
    if task == "inpainting":
        y = images.load_tiff(manifest.path(tile, "y")).astype(np.float64)
        mask = images.load_mask_png(manifest.path(tile, "mask"))
        return y, InpaintingOperator(mask=mask, mask_fraction=float(1.0 - mask.mean()))
    ms = images.load_tiff(manifest.path(tile, "ms")).astype(np.float64)
    pan = images.load_tiff(manifest.path(tile, "pan")).astype(np.float64)
    return ms, pan


def load_tile_reference(manifest: DatasetManifest, tile: TileRecord) -> np.ndarray | None:
    if "reference" not in tile.files:
        return None
    return images.load_tiff(manifest.path(tile, "reference")).astype(np.float64)
