"""Shared oracles: adjoint dot-product test and central finite differences."""

import numpy as np
import pytest


def adjoint_dot_error(apply_fn, adjoint_fn, in_shape, out_shape, rng) -> float:
    """Relative error of <A x, v> - <x, A^T v> on one random instance."""
    x = rng.standard_normal(in_shape)
    v = rng.standard_normal(out_shape)
    ax = apply_fn(x)
    atv = adjoint_fn(v)
    lhs = float(np.sum(ax * v))
    rhs = float(np.sum(x * atv))
    scale = max(abs(lhs), abs(rhs), 1e-30)
    return abs(lhs - rhs) / scale


def check_adjoint(apply_fn, adjoint_fn, in_shape, out_shape, rng,
                  trials: int = 100, tol: float = 1e-10) -> None:
    errs = [
        adjoint_dot_error(apply_fn, adjoint_fn, in_shape, out_shape, rng)
        for _ in range(trials)
    ]
    assert max(errs) < tol, f"worst adjoint dot-product error {max(errs):.3g}"


def finite_difference_grad(f, x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def check_grad(f, grad_fn, x0: np.ndarray, tol: float = 1e-4, h: float = 1e-5) -> None:
    """Compare an analytic gradient against central differences.

    Error is relative to the gradient's overall scale so near-zero entries
    do not blow up the ratio.
    """
    numeric = finite_difference_grad(f, x0, h)
    analytic = np.asarray(grad_fn(x0), dtype=np.float64)
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-8)
    err = np.max(np.abs(numeric - analytic)) / scale
    assert err < tol, f"max relative gradient error {err:.3g} (tol {tol})"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
