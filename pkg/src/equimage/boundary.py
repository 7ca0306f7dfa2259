"""Reflection boundary handling shared by resampling, convolution and padding.

Everything here uses the same convention: coordinates reflect about sample
centres (continuous coordinate -0.3 folds to 0.3, matching ``np.pad`` mode
``'reflect'``), repeated as often as needed for far out-of-range values.
"""

from __future__ import annotations

import numpy as np


def reflect_fold(t: np.ndarray, n: int) -> np.ndarray:
    """Fold continuous sample coordinates ``t`` into ``[0, n - 1]`` by mirror
    reflection about the first and last sample centres.

    Works for arbitrarily far out-of-range coordinates. ``n == 1`` collapses
    everything onto the single sample.
    """
    if n < 1:
        raise ValueError(f"axis length must be >= 1, got {n}")
    t = np.asarray(t, dtype=np.float64)
    if n == 1:
        return np.zeros_like(t)
    period = 2.0 * (n - 1)
    folded = np.mod(t, period)
    return np.where(folded > n - 1, period - folded, folded)


def reflect_indices(n: int, pad: int) -> np.ndarray:
    """Source index for each position of an axis of length ``n`` padded by
    ``pad`` on both sides with mirror reflection.

    Equivalent to the index map realised by ``np.pad(..., mode='reflect')``.
    """
    if pad < 0:
        raise ValueError("pad must be non-negative")
    t = np.arange(-pad, n + pad, dtype=np.float64)
    return reflect_fold(t, n).astype(np.intp)


def pad_reflect(x: np.ndarray, pad: int) -> np.ndarray:
    """Mirror-pad the two trailing axes of ``x`` by ``pad`` samples.

    ``pad`` must not exceed axis length - 1 (one reflection period).
    """
    if pad == 0:
        return x
    if pad > min(x.shape[-2], x.shape[-1]) - 1:
        raise ValueError(
            f"reflection pad {pad} too large for image of shape {x.shape[-2:]}"
        )
    width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(x, width, mode="reflect")


def _fold_axis_adjoint(v: np.ndarray, pad: int, axis: int) -> np.ndarray:
    """Fold one mirror-padded axis back: core plus flipped border slabs.

    Padded position a maps to source p - a (leading) / n - 2 - i (trailing),
    so the borders add back reversed just inside the edges.
    """
    n = v.shape[axis] - 2 * pad
    if pad > n - 1:
        raise ValueError(f"reflection pad {pad} too large for axis of length {n}")
    sl = [slice(None)] * v.ndim

    def take(start, stop):
        sl[axis] = slice(start, stop)
        return v[tuple(sl)]

    out = take(pad, pad + n).copy()
    lead = np.flip(take(0, pad), axis=axis)
    trail = np.flip(take(pad + n, 2 * pad + n), axis=axis)
    sl_out = [slice(None)] * v.ndim
    sl_out[axis] = slice(1, pad + 1)
    out[tuple(sl_out)] += lead
    sl_out[axis] = slice(n - 1 - pad, n - 1)
    out[tuple(sl_out)] += trail
    return out


def pad_reflect_adjoint(v: np.ndarray, pad: int) -> np.ndarray:
    """Transpose of :func:`pad_reflect`: fold padded-border contributions back
    onto their interior source samples (scatter-add along both trailing axes).
    """
    if pad == 0:
        return v
    out = _fold_axis_adjoint(v, pad, v.ndim - 2)
    return _fold_axis_adjoint(out, pad, out.ndim - 1)


def pad_zero(x: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad the two trailing axes of ``x`` by ``pad`` samples."""
    if pad == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(x, width, mode="constant")


def pad_zero_adjoint(v: np.ndarray, pad: int) -> np.ndarray:
    """Transpose of :func:`pad_zero`: crop the padded border."""
    if pad == 0:
        return v
    return v[..., pad:-pad, pad:-pad]
