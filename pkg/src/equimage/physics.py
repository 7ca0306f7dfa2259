"""Forward operators and noise models for the two measurement setups.

Inpainting is a per-pixel binary projection; pansharpening pairs an
anti-aliased blur + downsample (the sensor MTF) with a spectral response
that collapses the channels into one panchromatic band. Every linear piece
exposes an exact adjoint. Operators are immutable; apply functions are pure
and noise sampling takes a caller-owned RNG stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import signal

from .boundary import pad_reflect, pad_reflect_adjoint


@dataclass(frozen=True)
class NoiseModel:
    """Measurement noise: 'none', 'gaussian' (std sigma) or 'poisson'.

    Poisson uses the scaled convention y = gain * Poisson(z / gain), so the
    variance is gain * z (higher gain is noisier) and gain -> 0 recovers the
    noiseless limit.
    """

    kind: str = "none"
    sigma: float = 0.0
    gain: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "poisson"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0 or self.gain < 0:
            raise ValueError("noise parameters must be non-negative")


def apply_noise(model: NoiseModel, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample a noisy measurement from the clean measurement ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if model.kind == "none":
        return z.copy()
    if model.kind == "gaussian":
        if model.sigma == 0.0:
            return z.copy()
        return z + model.sigma * rng.standard_normal(z.shape)
    # poisson
    if model.gain == 0.0:
        return z.copy()
    if np.any(z < 0):
        raise ValueError("poisson noise requires non-negative measurements")
    return model.gain * rng.poisson(z / model.gain).astype(np.float64)


@dataclass(frozen=True)
class InpaintingOperator:
    """Binary keep-mask projection; self-adjoint and idempotent."""

    mask: np.ndarray      # (H, W), entries in {0, 1}
    mask_fraction: float  # fraction of pixels masked away

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=np.float64)
        if mask.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise ValueError("mask entries must be 0 or 1")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return inpaint_apply(self, x)

    adjoint = apply


def random_mask(p: float, height: int, width: int, rng: np.random.Generator) -> InpaintingOperator:
    """i.i.d. Bernoulli(1 - p) keep-mask with masked fraction ``p``."""
    if not (0.0 <= p < 1.0):
        raise ValueError(f"masked fraction must be in [0, 1), got {p}")
    mask = (rng.random((height, width)) >= p).astype(np.float64)
    return InpaintingOperator(mask=mask, mask_fraction=p)


def inpaint_apply(op: InpaintingOperator, x: np.ndarray) -> np.ndarray:
    """Per-channel mask multiply."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1:] != op.mask.shape:
        raise ValueError(f"image shape {x.shape} does not match mask {op.mask.shape}")
    return x * op.mask.astype(x.dtype, copy=False)


def gaussian_mtf_kernel(sigma: float, size: int | None = None) -> np.ndarray:
    """Discretized isotropic Gaussian blur kernel, normalized to sum 1.

    Default size is the smallest odd integer >= 8 * sigma + 1, which keeps
    the truncated mass below ~1e-6.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if size is None:
        size = int(math.ceil(8.0 * sigma + 1.0))
        if size % 2 == 0:
            size += 1
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    half = size // 2
    t = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def box_kernel(size: int) -> np.ndarray:
    """Uniform (box) blur kernel, normalized to sum 1."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"box size must be odd and positive, got {size}")
    return np.full((size, size), 1.0 / (size * size))


def _correlate_reflect(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel cross-correlation with mirror boundary, same output size."""
    half = kernel.shape[0] // 2
    xp = pad_reflect(x, half)
    return np.stack(
        [signal.correlate(xp[c], kernel, mode="valid", method="auto") for c in range(x.shape[0])]
    )


def _correlate_reflect_adjoint(v: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Transpose of :func:`_correlate_reflect`: full convolution into the
    padded frame, then fold the border back."""
    half = kernel.shape[0] // 2
    grad_pad = np.stack(
        [signal.convolve(v[c], kernel, mode="full", method="auto") for c in range(v.shape[0])]
    )
    return pad_reflect_adjoint(grad_pad, half)


@dataclass(frozen=True)
class BlurDownsample:
    """Anti-aliased downsampling: mirror-padded convolution with ``kernel``
    followed by keeping every ``factor``-th sample per axis."""

    kernel: np.ndarray
    factor: int

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=np.float64)
        if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
            raise ValueError(f"kernel must be odd square, got shape {kernel.shape}")
        if abs(kernel.sum() - 1.0) > 1e-9:
            raise ValueError("kernel must be normalized to sum 1")
        if self.factor < 1:
            raise ValueError("factor must be >= 1")
        kernel.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return blur_downsample(x, self.kernel, self.factor)

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        return blur_downsample_adjoint(v, self.kernel, self.factor)


def _sample_offset(factor: int) -> int:
    # sampling phase closest to the centre of each factor x factor block
    return (factor - 1) // 2


def blur_downsample(x: np.ndarray, kernel: np.ndarray, factor: int) -> np.ndarray:
    """Convolve each channel (reflection boundary) and subsample by ``factor``."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"expected (C, H, W), got shape {x.shape}")
    if x.shape[1] % factor or x.shape[2] % factor:
        raise ValueError(f"factor {factor} must divide image size {x.shape[1:]}")
    blurred = _correlate_reflect(x.astype(np.float64, copy=False), kernel)
    off = _sample_offset(factor)
    out = blurred[:, off::factor, off::factor]
    return out.astype(x.dtype, copy=False)


def blur_downsample_adjoint(v: np.ndarray, kernel: np.ndarray, factor: int) -> np.ndarray:
    """Transpose of :func:`blur_downsample`: zero-upsample, then correlate."""
    v = np.asarray(v)
    if v.ndim != 3:
        raise ValueError(f"expected (C, h, w), got shape {v.shape}")
    c, h, w = v.shape
    off = _sample_offset(factor)
    z = np.zeros((c, h * factor, w * factor), dtype=np.float64)
    z[:, off::factor, off::factor] = v
    out = _correlate_reflect_adjoint(z, kernel)
    return out.astype(v.dtype, copy=False)


@dataclass(frozen=True)
class SrfOperator:
    """Spectral response: weighted channel sum to a single full-res band."""

    weights: np.ndarray  # (C,), non-negative, sum 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError("SRF weights must be 1-D")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("SRF weights must be non-negative and sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return srf_apply(self.weights, x)

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        return srf_adjoint(self.weights, v)


def flat_srf(channels: int) -> SrfOperator:
    """Plain channel average (a flat spectral response)."""
    return SrfOperator(weights=np.full(channels, 1.0 / channels))


def srf_apply(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Weighted channel sum -> (1, H, W) panchromatic raster."""
    x = np.asarray(x)
    weights = np.asarray(weights, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    if x.ndim != 3 or x.shape[0] != weights.shape[0]:
        raise ValueError(f"image {x.shape} does not match {weights.shape[0]} SRF weights")
    return np.tensordot(weights, x, axes=(0, 0))[None]


def srf_adjoint(weights: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Broadcast the single band back to weighted channels."""
    v = np.asarray(v)
    if v.ndim != 3 or v.shape[0] != 1:
        raise ValueError(f"expected (1, H, W), got shape {v.shape}")
    weights = np.asarray(weights, dtype=v.dtype if v.dtype.kind == "f" else np.float64)
    return weights[:, None, None] * v


class PanPair(NamedTuple):
    """Pansharpening measurement: low-res multispectral + full-res pan."""

    ms: np.ndarray
    pan: np.ndarray


@dataclass(frozen=True)
class PansharpeningOperator:
    """Joint operator {blur+downsample, spectral response}. The measurement
    vector is treated as the concatenation of the two parts."""

    blur: BlurDownsample
    srf: SrfOperator

    @classmethod
    def create(cls, channels: int, factor: int, mtf_sigma: float | None = None,
               kernel_size: int | None = None) -> "PansharpeningOperator":
        """Standard setup: Gaussian MTF with sigma = factor, flat SRF."""
        sigma = float(factor) if mtf_sigma is None else mtf_sigma
        kernel = gaussian_mtf_kernel(sigma, kernel_size)
        return cls(blur=BlurDownsample(kernel=kernel, factor=factor), srf=flat_srf(channels))

    @property
    def factor(self) -> int:
        return self.blur.factor

    def apply(self, x: np.ndarray) -> PanPair:
        return pansharpen_apply(self, x)


def pansharpen_apply(op: PansharpeningOperator, x: np.ndarray) -> PanPair:
    """Measure an image with both pansharpening channels."""
    return PanPair(ms=op.blur.apply(x), pan=op.srf.apply(x))
