"""Reference-based and no-reference reconstruction quality metrics.

PSNR/SSIM/ERGAS compare against a reference; the QNR family measures
pansharpening quality with no reference by comparing inter-band and
band-to-pan structural similarity before and after reconstruction. All
functions are pure and embarrassingly parallel over images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .physics import PansharpeningOperator

QNR_ALPHA = 1.0
QNR_BETA = 1.5   # emphasizes structural quality


@dataclass
class MetricReport:
    """Per-image metric values; fields are None where a metric does not
    apply to the task."""

    psnr: float | None = None
    ssim: float | None = None
    ergas: float | None = None
    qnr: float | None = None
    d_lambda: float | None = None
    d_s: float | None = None


def psnr(x_hat: np.ndarray, x: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE), +inf for identical images."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x.shape}")
    mse = float(np.mean((x_hat - x) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """2-D Gaussian averaging window, normalized to sum 1."""
    if size % 2 == 0 or size < 1:
        raise ValueError(f"window size must be odd positive, got {size}")
    t = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-0.5 * (t / sigma) ** 2)
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0,
         win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean local structural similarity of two single-channel images.

    Gaussian window statistics, evaluated on the valid interior only
    (no padding), constants C1 = (0.01 L)^2 and C2 = (0.03 L)^2.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if b.ndim == 3 and b.shape[0] == 1:
        b = b[0]
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"ssim expects single-channel images, got shape {a.shape}")
    if min(a.shape) < win_size:
        raise ValueError(f"image {a.shape} smaller than the {win_size}x{win_size} window")

    win = gaussian_window(win_size, sigma)

    def local_mean(img):
        return signal.correlate(img, win, mode="valid")

    mu_a = local_mean(a)
    mu_b = local_mean(b)
    var_a = local_mean(a * a) - mu_a**2
    var_b = local_mean(b * b) - mu_b**2
    cov = local_mean(a * b) - mu_a * mu_b

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ergas(x_hat: np.ndarray, ref: np.ndarray, factor: int) -> float:
    """Relative dimensionless global error: (100 / j) * RMS over channels of
    the channel RMSE normalized by the channel mean of the reference."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x_hat.shape != ref.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {ref.shape}")
    if x_hat.ndim == 2:
        x_hat = x_hat[None]
        ref = ref[None]
    means = ref.mean(axis=(1, 2))
    if np.any(means == 0):
        raise ValueError("reference has a zero-mean channel")
    rmse = np.sqrt(((x_hat - ref) ** 2).mean(axis=(1, 2)))
    return float(100.0 / factor * np.sqrt(np.mean((rmse / means) ** 2)))


def combine_qnr(d_lambda: float, d_s: float, alpha: float = QNR_ALPHA,
                beta: float = QNR_BETA) -> float:
    """QNR = (1 - D_lambda)^alpha * (1 - D_s)^beta."""
    return float((1.0 - d_lambda) ** alpha * (1.0 - d_s) ** beta)


def qnr(x_hat: np.ndarray, y_ms: np.ndarray, y_pan: np.ndarray,
        op: PansharpeningOperator, win_size: int = 11) -> tuple[float, float, float]:
    """No-reference pansharpening quality: (qnr, d_lambda, d_s).

    D_lambda compares inter-band similarity of the reconstruction against
    the low-res multispectral input; D_s compares each band against the pan
    channel at high resolution and against the degraded pan at low
    resolution. Q is SSIM and differences are taken in absolute value, which
    keeps both D terms in [0, 1] and QNR monotone in each.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    y_ms = np.asarray(y_ms, dtype=np.float64)
    y_pan = np.asarray(y_pan, dtype=np.float64)
    c = x_hat.shape[0]
    if y_ms.shape[0] != c:
        raise ValueError(f"channel mismatch: {c} reconstructed vs {y_ms.shape[0]} measured")
    if x_hat.shape[1:] != y_pan.shape[1:]:
        raise ValueError(f"reconstruction {x_hat.shape} does not match pan {y_pan.shape}")

    pan = y_pan[0]
    pan_lr = op.blur.apply(y_pan)[0]

    diffs = []
    for c2 in range(c):
        for c1 in range(c):
            if c1 == c2:
                continue
            q_hat = ssim(x_hat[c2], x_hat[c1], win_size=win_size)
            q_ms = ssim(y_ms[c2], y_ms[c1], win_size=win_size)
            diffs.append(abs(q_hat - q_ms))
    d_lambda = float(np.mean(diffs))

    diffs = []
    for ch in range(c):
        q_hr = ssim(x_hat[ch], pan, win_size=win_size)
        q_lr = ssim(y_ms[ch], pan_lr, win_size=win_size)
        diffs.append(abs(q_hr - q_lr))
    d_s = float(np.mean(diffs))

    return combine_qnr(d_lambda, d_s), d_lambda, d_s
