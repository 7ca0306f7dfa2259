"""Training objectives: measurement consistency, transform-equivariance,
unbiased risk estimates for noisy data, structural TV, supervised oracle and
reduced-resolution self-supervision.

All squared-error terms are means over their entries (so values are
comparable across image sizes) and every loss is a pure function of the
parameters, the batch and the RNG stream it is given. One group element is
sampled per training step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DTensor, Tape
from .groups import GroupSpec, Homography, sample_transform
from .models import ReconNet
from .physics import (
    InpaintingOperator,
    NoiseModel,
    PanPair,
    PansharpeningOperator,
    blur_downsample,
)
from .warp import build_warp


@dataclass(frozen=True)
class LossConfig:
    """Which terms to train with and their weights."""

    terms: tuple[str, ...] = ("mc",)
    weights: dict | None = None
    group: GroupSpec | None = None
    noise: NoiseModel = NoiseModel()
    structural: str = "tv"        # pansharpening pan-band term: tv | mse | none
    tv_isotropic: bool = False
    sure_probes: int = 1
    sure_tau: float | None = None

    def __post_init__(self):
        known = {"mc", "tv", "ei", "sure", "supervised", "wald"}
        for term in self.terms:
            if term not in known:
                raise ValueError(f"unknown loss term {term!r}")
        if not any(t in ("mc", "sure", "supervised", "wald") for t in self.terms):
            raise ValueError("at least one consistency term must be selected")
        if self.weights:
            for name, w in self.weights.items():
                if w < 0:
                    raise ValueError(f"loss weight {name} must be >= 0, got {w}")
        if self.structural not in ("tv", "mse", "none"):
            raise ValueError(f"unknown structural flavor {self.structural!r}")
        if ("ei" in self.terms) and self.group is None:
            raise ValueError("the equivariance term needs a group spec")

    def weight(self, name: str) -> float:
        if self.weights and name in self.weights:
            return float(self.weights[name])
        return 1.0


def _mse(a: DTensor, b: DTensor) -> DTensor:
    return ad.mean(ad.square(ad.sub(a, b)))


def _reconstruct(tape: Tape, model: ReconNet, y, leaves=None) -> DTensor:
    if isinstance(y, PanPair):
        return model.forward_pansharpen(tape, tape.leaf(y.ms), tape.leaf(y.pan), leaves)
    return model.forward_inpaint(tape, tape.leaf(y), leaves)


def _measure_graph(tape: Tape, op, x_hat: DTensor):
    """Push a reconstruction through the forward operator inside the graph."""
    if isinstance(op, PansharpeningOperator):
        return (ad.linear_op(op.blur, x_hat), ad.linear_op(op.srf, x_hat))
    return (ad.linear_op(op, x_hat),)


def _measurement_parts(y) -> tuple[np.ndarray, ...]:
    return tuple(y) if isinstance(y, PanPair) else (y,)


def mc_loss(tape: Tape, model: ReconNet, y, op, leaves=None,
            x_hat: DTensor | None = None) -> DTensor:
    """Measurement consistency: mean squared error between re-measured
    reconstruction and the data.

    For pansharpening this is the spectral (low-res multispectral) part
    only; the pan band is handled by the structural term.
    """
    if x_hat is None:
        x_hat = _reconstruct(tape, model, y, leaves)
    if isinstance(op, PansharpeningOperator):
        return _mse(ad.linear_op(op.blur, x_hat), tape.leaf(y.ms))
    return _mse(ad.linear_op(op, x_hat), tape.leaf(y))


def mse_structural(tape: Tape, x_hat: DTensor, y_pan: np.ndarray, srf_op) -> DTensor:
    """Plain MSE between the spectrally collapsed reconstruction and the pan band."""
    return _mse(ad.linear_op(srf_op, x_hat), tape.leaf(y_pan))


class _DiffH:
    """Horizontal forward differences, (C, H, W) -> (C, H, W-1)."""

    @staticmethod
    def apply(x):
        return x[:, :, 1:] - x[:, :, :-1]

    @staticmethod
    def adjoint(v):
        out = np.zeros((v.shape[0], v.shape[1], v.shape[2] + 1), dtype=v.dtype)
        out[:, :, 1:] += v
        out[:, :, :-1] -= v
        return out


class _DiffV:
    """Vertical forward differences, (C, H, W) -> (C, H-1, W)."""

    @staticmethod
    def apply(x):
        return x[:, 1:, :] - x[:, :-1, :]

    @staticmethod
    def adjoint(v):
        out = np.zeros((v.shape[0], v.shape[1] + 1, v.shape[2]), dtype=v.dtype)
        out[:, 1:, :] += v
        out[:, :-1, :] -= v
        return out


def tv_structural(tape: Tape, x_hat: DTensor, y_pan: np.ndarray, srf_op,
                  isotropic: bool = False) -> DTensor:
    """Total-variation distance between the collapsed reconstruction and the
    pan band: the L1 norm (entry mean) of the finite-difference gradients of
    their difference. Constant offsets are invisible to it.
    """
    d = ad.sub(ad.linear_op(srf_op, x_hat), tape.leaf(y_pan))
    if isotropic:
        # common-grid crop so both components align
        gh = ad.linear_op(_CropRows, ad.linear_op(_DiffH, d))
        gv = ad.linear_op(_CropCols, ad.linear_op(_DiffV, d))
        eps = tape.leaf(np.full(gh.values.shape, 1e-12, dtype=gh.values.dtype))
        mag = ad.sqrt(ad.add(ad.add(ad.square(gh), ad.square(gv)), eps))
        return ad.mean(mag)
    gh = ad.linear_op(_DiffH, d)
    gv = ad.linear_op(_DiffV, d)
    n = gh.values.size + gv.values.size
    return ad.scale(ad.add(ad.total(ad.absolute(gh)), ad.total(ad.absolute(gv))), 1.0 / n)


class _CropRows:
    """Drop the last row (adjoint zero-pads it back)."""

    @staticmethod
    def apply(x):
        return x[:, :-1, :]

    @staticmethod
    def adjoint(v):
        out = np.zeros((v.shape[0], v.shape[1] + 1, v.shape[2]), dtype=v.dtype)
        out[:, :-1, :] = v
        return out


class _CropCols:
    """Drop the last column (adjoint zero-pads it back)."""

    @staticmethod
    def apply(x):
        return x[:, :, :-1]

    @staticmethod
    def adjoint(v):
        out = np.zeros((v.shape[0], v.shape[1], v.shape[2] + 1), dtype=v.dtype)
        out[:, :, :-1] = v
        return out


def ei_loss(tape: Tape, model: ReconNet, y, op, transform: Homography,
            leaves=None, x_hat: DTensor | None = None) -> DTensor:
    """Equivariance term: warp the reconstruction, re-measure it, reconstruct
    again and penalize the mismatch.

    Gradients flow through both branches, including the warp itself (its
    backward is the warp adjoint).
    """
    leaves = leaves if leaves is not None else model.param_leaves(tape)
    if x_hat is None:
        x_hat = _reconstruct(tape, model, y, leaves)
    height, width = x_hat.values.shape[-2:]
    table = build_warp(transform, height, width)
    x_warp = ad.linear_op(table, x_hat)
    remeasured = _measure_graph(tape, op, x_warp)
    x_again = model.forward(tape, *remeasured, leaves=leaves)
    return _mse(x_warp, x_again)


def supervised_loss(tape: Tape, model: ReconNet, y, x_ref: np.ndarray,
                    leaves=None) -> DTensor:
    """Oracle MSE against ground truth (sense-check runs only)."""
    if x_ref is None:
        raise ValueError("supervised loss needs a ground-truth reference")
    x_hat = _reconstruct(tape, model, y, leaves)
    return _mse(x_hat, tape.leaf(x_ref))


def _rademacher(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.choice(np.array([-1.0, 1.0]), size=shape)


def _default_tau(y: np.ndarray) -> float:
    return max(float(np.max(np.abs(y))), 1.0) * 1e-3


def _sure_part_gaussian(tape, model, y, op, part_index, sigma, rng, probes, tau,
                        leaves) -> DTensor:
    y_parts = _measurement_parts(y)
    target = y_parts[part_index]
    m = target.size
    x_hat = _reconstruct(tape, model, y, leaves)
    h_y = _measure_graph(tape, op, x_hat)[part_index]
    loss = ad.add(_mse(h_y, tape.leaf(target)), _scalar(tape, -sigma**2))
    div_terms = []
    for _ in range(probes):
        b = _rademacher(rng, target.shape)
        perturbed = list(y_parts)
        perturbed[part_index] = target + tau * b
        y_pert = PanPair(*perturbed) if isinstance(y, PanPair) else perturbed[0]
        h_pert = _measure_graph(tape, op, _reconstruct(tape, model, y_pert, leaves))[part_index]
        div = ad.scale(ad.total(ad.mul(ad.sub(h_pert, h_y), tape.leaf(b))), 1.0 / tau)
        div_terms.append(div)
    div_hat = _average(tape, div_terms)
    return ad.add(loss, ad.scale(div_hat, 2.0 * sigma**2 / m))


def _scalar(tape: Tape, value: float) -> DTensor:
    return tape.leaf(np.asarray(value, dtype=np.float64))


def _average(tape: Tape, terms: list[DTensor]) -> DTensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return ad.scale(acc, 1.0 / len(terms))


def sure_gaussian(tape: Tape, model: ReconNet, y, op, sigma: float,
                  rng: np.random.Generator, probes: int = 1,
                  tau: float | None = None, leaves=None) -> DTensor:
    """Unbiased estimate of the mean supervised measurement error under
    Gaussian noise of known std ``sigma``.

    Per measurement part of size m, with h(y) = A f(y):

        mean(h(y) - y)^2 - sigma^2 + (2 sigma^2 / m) * div_hat

    where div_hat is the Hutchinson estimate of the divergence of y -> h(y),
    using ``probes`` random +-1 probes and perturbation step ``tau``. Its
    expectation over the noise equals mean(h(y) - A x)^2. At sigma = 0 this
    reduces to plain measurement consistency.
    """
    if probes < 1:
        raise ValueError("need at least one probe")
    leaves = leaves if leaves is not None else model.param_leaves(tape)
    parts = _measurement_parts(y)
    total = None
    for index, target in enumerate(parts):
        t = tau if tau is not None else _default_tau(target)
        term = _sure_part_gaussian(tape, model, y, op, index, sigma, rng, probes, t, leaves)
        total = term if total is None else ad.add(total, term)
    return total


def _sure_part_poisson(tape, model, y, op, part_index, gain, rng, probes, tau,
                       leaves) -> DTensor:
    y_parts = _measurement_parts(y)
    target = y_parts[part_index]
    m = target.size
    x_hat = _reconstruct(tape, model, y, leaves)
    h_y = _measure_graph(tape, op, x_hat)[part_index]
    loss = ad.add(_mse(h_y, tape.leaf(target)),
                  _scalar(tape, -gain * float(np.mean(target))))
    div_terms = []
    for _ in range(probes):
        b = _rademacher(rng, target.shape)
        perturbed = list(y_parts)
        perturbed[part_index] = target + tau * b
        y_pert = PanPair(*perturbed) if isinstance(y, PanPair) else perturbed[0]
        h_pert = _measure_graph(tape, op, _reconstruct(tape, model, y_pert, leaves))[part_index]
        weighted = ad.mul(ad.sub(h_pert, h_y), tape.leaf(b * target))
        div_terms.append(ad.scale(ad.total(weighted), 1.0 / tau))
    div_hat = _average(tape, div_terms)
    return ad.add(loss, ad.scale(div_hat, 2.0 * gain / m))


def sure_poisson(tape: Tape, model: ReconNet, y, op, gain: float,
                 rng: np.random.Generator, probes: int = 1,
                 tau: float | None = None, leaves=None) -> DTensor:
    """Unbiased risk estimate for scaled Poisson noise y = gain * Pois(z / gain).

    Derivation sketch, per measurement part of size m with h(y) = A f(y) and
    clean measurement z: expanding E|h(y) - z|^2 and using the Poisson
    identity E[n_i g(n)] = lambda_i E[g(n + e_i)] gives

        E|h(y) - z|^2 = E[ |h(y) - y|^2 - gain * sum(y)
                          + 2 gain * sum_i y_i d h_i / d y_i ] + O(gain^2)

    where the first-order Taylor step replaces the exact finite difference
    h_i(y) - h_i(y - gain e_i) by its derivative. The weighted divergence is
    estimated with +-1 probes:  (b * y)^T (h(y + tau b) - h(y)) / tau.
    In entry-mean units:

        mean(h(y) - y)^2 - gain * mean(y) + (2 gain / m) * div_hat_weighted

    gain -> 0 recovers plain measurement consistency; exact zeros in y are
    fine (their probe weight vanishes).
    """
    if gain < 0:
        raise ValueError("gain must be non-negative")
    if probes < 1:
        raise ValueError("need at least one probe")
    for part in _measurement_parts(y):
        if np.any(part < 0):
            raise ValueError("poisson measurements must be non-negative")
    leaves = leaves if leaves is not None else model.param_leaves(tape)
    total = None
    for index, target in enumerate(_measurement_parts(y)):
        t = tau if tau is not None else _default_tau(target)
        term = _sure_part_poisson(tape, model, y, op, index, gain, rng, probes, t, leaves)
        total = term if total is None else ad.add(total, term)
    return total


def wald_pair(y_ms: np.ndarray, y_pan: np.ndarray, op: PansharpeningOperator):
    """Reduced-resolution self-supervision pair: degrade both measurements by
    the operator's own blur + downsample and treat the original multispectral
    image as the target. ``factor == 1`` degenerates to the identity pairing.
    """
    j = op.factor
    if j == 1:
        return (y_ms.copy(), y_pan.copy()), y_ms.copy()
    if y_ms.shape[1] % j or y_ms.shape[2] % j:
        raise ValueError(f"multispectral size {y_ms.shape[1:]} not divisible by {j} again")
    ms_lr = blur_downsample(y_ms, op.blur.kernel, j)
    pan_lr = blur_downsample(y_pan, op.blur.kernel, j)
    return (ms_lr, pan_lr), y_ms.copy()


def pansharpen_unsup_loss(tape: Tape, model: ReconNet, y: PanPair,
                          op: PansharpeningOperator, transform: Homography | None,
                          cfg: LossConfig, rng: np.random.Generator | None = None,
                          leaves=None) -> tuple[DTensor, dict[str, float]]:
    """Full unsupervised pansharpening objective: spectral consistency +
    structural pan term + equivariance, with configured weights.

    In noisy mode ('sure' in the terms) the spectral and structural
    consistency terms are both replaced by their unbiased-risk counterparts
    on the two measurement parts.
    """
    leaves = leaves if leaves is not None else model.param_leaves(tape)
    parts: dict[str, float] = {}
    terms: list[DTensor] = []
    x_hat = _reconstruct(tape, model, y, leaves)

    if "sure" in cfg.terms:
        if cfg.noise.kind == "poisson":
            consistency = sure_poisson(tape, model, y, op, cfg.noise.gain, rng,
                                       cfg.sure_probes, cfg.sure_tau, leaves)
        else:
            consistency = sure_gaussian(tape, model, y, op, cfg.noise.sigma, rng,
                                        cfg.sure_probes, cfg.sure_tau, leaves)
        terms.append(ad.scale(consistency, cfg.weight("mc")))
        parts["sure"] = float(consistency.values)
    else:
        if "mc" in cfg.terms:
            term = mc_loss(tape, model, y, op, leaves, x_hat=x_hat)
            terms.append(ad.scale(term, cfg.weight("mc")))
            parts["mc"] = float(term.values)
        if "tv" in cfg.terms and cfg.structural != "none":
            if cfg.structural == "tv":
                term = tv_structural(tape, x_hat, y.pan, op.srf, cfg.tv_isotropic)
            else:
                term = mse_structural(tape, x_hat, y.pan, op.srf)
            terms.append(ad.scale(term, cfg.weight("tv")))
            parts["tv"] = float(term.values)

    if "ei" in cfg.terms:
        if transform is None:
            transform = sample_transform(cfg.group, rng)
        term = ei_loss(tape, model, y, op, transform, leaves, x_hat=x_hat)
        terms.append(ad.scale(term, cfg.weight("ei")))
        parts["ei"] = float(term.values)

    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    parts["total"] = float(total.values)
    return total, parts
