"""Minimal reverse-mode differentiation over the primitive set the models
and losses need, plus the Adam optimizer.

A Tape records forward computations in topological order; backward replays
the records once in reverse, accumulating exact vector-Jacobian products.
Fixed linear image operators (warps, masks, blurs, spectral responses) enter
the graph through :func:`linear_op`, whose backward is the operator's
adjoint. A tape is single-owner and must not be shared across threads;
parameter arrays are plain numpy values and may be snapshotted freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boundary import pad_reflect, pad_reflect_adjoint, pad_zero, pad_zero_adjoint


class Tape:
    """Topologically ordered record of operations for one forward pass."""

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list = []          # callable(grad_out) -> tuple of parent grads
        self._needs_grad: list[bool] = []

    def leaf(self, values, requires_grad: bool = False) -> "DTensor":
        values = np.asarray(values)
        if values.dtype.kind != "f":
            values = values.astype(np.float64)
        if values.ndim > 4:
            raise ValueError(f"rank {values.ndim} exceeds the supported maximum of 4")
        if not np.all(np.isfinite(values)):
            raise ValueError("leaf values must be finite")
        return self._record(values, (), None, requires_grad)

    def _record(self, values, parents, vjp, needs_grad) -> "DTensor":
        node_id = len(self._values)
        self._values.append(values)
        self._parents.append(parents)
        self._vjps.append(vjp)
        self._needs_grad.append(needs_grad)
        return DTensor(tape=self, node_id=node_id)

    def _op(self, values: np.ndarray, parents: tuple["DTensor", ...], vjp) -> "DTensor":
        for p in parents:
            if p.tape is not self:
                raise ValueError("all operands must live on the same tape")
        needs = any(self._needs_grad[p.node_id] for p in parents)
        ids = tuple(p.node_id for p in parents)
        return self._record(values, ids, vjp if needs else None, needs)

    def backward(self, loss: "DTensor") -> dict[int, np.ndarray]:
        """Gradients of the scalar ``loss`` w.r.t. every grad-enabled node.

        Visits nodes in reverse topological order exactly once. Repeated
        calls without a new forward pass return identical gradients.
        """
        if loss.tape is not self:
            raise ValueError("loss does not belong to this tape")
        if loss.values.ndim != 0 and loss.values.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.values.shape}")
        grads: dict[int, np.ndarray] = {
            loss.node_id: np.ones_like(self._values[loss.node_id])
        }
        for nid in range(loss.node_id, -1, -1):
            g = grads.get(nid)
            if g is None or self._vjps[nid] is None:
                continue
            parent_grads = self._vjps[nid](g)
            for pid, pg in zip(self._parents[nid], parent_grads):
                if pg is None or not self._needs_grad[pid]:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        return grads


@dataclass(frozen=True)
class DTensor:
    """Handle to one value recorded on a tape."""

    tape: Tape
    node_id: int

    @property
    def values(self) -> np.ndarray:
        return self.tape._values[self.node_id]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype


def _check_same_shape(a: DTensor, b: DTensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: DTensor, b: DTensor) -> DTensor:
    _check_same_shape(a, b, "add")
    return a.tape._op(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: DTensor, b: DTensor) -> DTensor:
    _check_same_shape(a, b, "sub")
    return a.tape._op(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a: DTensor, b: DTensor) -> DTensor:
    _check_same_shape(a, b, "mul")
    av, bv = a.values, b.values
    return a.tape._op(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x: DTensor, c: float) -> DTensor:
    c = float(c)
    return x.tape._op(x.values * c, (x,), lambda g: (g * c,))


def relu(x: DTensor) -> DTensor:
    keep = x.values > 0
    return x.tape._op(np.where(keep, x.values, 0.0), (x,), lambda g: (g * keep,))


def absolute(x: DTensor) -> DTensor:
    sign = np.sign(x.values)
    return x.tape._op(np.abs(x.values), (x,), lambda g: (g * sign,))


def square(x: DTensor) -> DTensor:
    xv = x.values
    return x.tape._op(xv * xv, (x,), lambda g: (g * (2.0 * xv),))


def sqrt(x: DTensor) -> DTensor:
    root = np.sqrt(x.values)
    safe = np.maximum(root, np.finfo(root.dtype).tiny ** 0.5)
    return x.tape._op(root, (x,), lambda g: (g / (2.0 * safe),))


def mean(x: DTensor) -> DTensor:
    # capture plain shape/dtype, not the DTensor (closures must not form
    # cycles back to the tape, or dead tapes linger until gc)
    shape, dtype, n = x.values.shape, x.values.dtype, x.values.size
    val = np.asarray(x.values.mean(dtype=np.float64), dtype=dtype)
    return x.tape._op(val, (x,), lambda g: (np.full(shape, g / n, dtype=dtype),))


def total(x: DTensor) -> DTensor:
    """Sum of all entries (scalar)."""
    shape, dtype = x.values.shape, x.values.dtype
    val = np.asarray(x.values.sum(dtype=np.float64), dtype=dtype)
    return x.tape._op(val, (x,), lambda g: (np.full(shape, g, dtype=dtype),))


def concat_channels(*tensors: DTensor) -> DTensor:
    if not tensors:
        raise ValueError("concat_channels needs at least one tensor")
    for t in tensors[1:]:
        if t.values.shape[1:] != tensors[0].values.shape[1:]:
            raise ValueError("concat_channels: trailing dims must match")
    sizes = [t.values.shape[0] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=0))

    vals = np.concatenate([t.values for t in tensors], axis=0)
    return tensors[0].tape._op(vals, tensors, vjp)


def linear_op(op, x: DTensor) -> DTensor:
    """Run a fixed linear image operator inside the graph.

    ``op`` must expose ``apply`` and ``adjoint``; the backward pass is
    exactly the adjoint, so gradients stay consistent with the operator's
    own dot-product tests.
    """
    return x.tape._op(op.apply(x.values), (x,), lambda g: (op.adjoint(g),))


def _im2col(xp: np.ndarray, k: int) -> np.ndarray:
    """Unfold padded (C, Hp, Wp) into a contiguous (C*k*k, H*W) matrix."""
    c = xp.shape[0]
    h = xp.shape[1] - k + 1
    w = xp.shape[2] - k + 1
    cols = np.empty((c, k, k, h, w), dtype=xp.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, dy, dx] = xp[:, dy:dy + h, dx:dx + w]
    return cols.reshape(c * k * k, h * w)


def _col2im(cols: np.ndarray, c: int, k: int, h: int, w: int) -> np.ndarray:
    """Fold (C*k*k, H*W) column gradients back onto the padded input frame."""
    grid = cols.reshape(c, k, k, h, w)
    out = np.zeros((c, h + k - 1, w + k - 1), dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            out[:, dy:dy + h, dx:dx + w] += grid[:, dy, dx]
    return out


def conv2d(x: DTensor, weight: DTensor, bias: DTensor | None = None,
           padding: str = "reflect") -> DTensor:
    """2-D convolution, stride 1, same-size output.

    ``x`` is (C_in, H, W), ``weight`` is (C_out, C_in, k, k) with odd k,
    ``bias`` is (C_out,). ``padding`` is 'reflect' or 'zero'.
    """
    xv, wv = x.values, weight.values
    if xv.ndim != 3 or wv.ndim != 4:
        raise ValueError(f"conv2d: expected (C,H,W) and (O,I,k,k), got {xv.shape}, {wv.shape}")
    cout, cin, k, k2 = wv.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d: kernel must be square odd, got {wv.shape}")
    if cin != xv.shape[0]:
        raise ValueError(f"conv2d: {xv.shape[0]} input channels vs weight expecting {cin}")
    if padding == "reflect":
        pad_fn, pad_adj = pad_reflect, pad_reflect_adjoint
    elif padding == "zero":
        pad_fn, pad_adj = pad_zero, pad_zero_adjoint
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")

    half = k // 2
    h, w = xv.shape[1], xv.shape[2]
    dtype = np.result_type(xv.dtype, wv.dtype)
    has_bias = bias is not None
    xp = pad_fn(xv, half).astype(dtype, copy=False)
    cols = _im2col(xp, k)
    wmat = wv.reshape(cout, cin * k * k).astype(dtype, copy=False)
    out = (wmat @ cols).reshape(cout, h, w)
    if has_bias:
        if bias.values.shape != (cout,):
            raise ValueError(f"conv2d: bias shape {bias.values.shape} != ({cout},)")
        out = out + bias.values[:, None, None]
    del cols  # rebuilt on demand in the backward pass; keeps live tapes small

    def vjp(g):
        gmat = np.ascontiguousarray(g.reshape(cout, h * w), dtype=dtype)
        grad_w = (gmat @ _im2col(xp, k).T).reshape(cout, cin, k, k)
        grad_cols = wmat.T @ gmat
        grad_x = pad_adj(_col2im(grad_cols, cin, k, h, w), half)
        grad_b = g.sum(axis=(1, 2)) if has_bias else None
        return (grad_x, grad_w, grad_b) if has_bias else (grad_x, grad_w)

    parents = (x, weight, bias) if has_bias else (x, weight)
    return x.tape._op(out, parents, vjp)


def _upsample_matrix(n_lr: int, factor: int) -> np.ndarray:
    """1-D bilinear interpolation matrix (n_lr * factor, n_lr) with the same
    pixel-centre alignment and reflection folding as the warp module."""
    from .boundary import reflect_fold

    n_hr = n_lr * factor
    t = (np.arange(n_hr, dtype=np.float64) + 0.5) / factor - 0.5
    t = reflect_fold(t, n_lr)
    i0 = np.floor(t).astype(np.intp)
    frac = t - i0
    i1 = np.minimum(i0 + 1, n_lr - 1)
    mat = np.zeros((n_hr, n_lr))
    rows = np.arange(n_hr)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat


_UPSAMPLE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _upsample_matrix_cached(n_lr: int, factor: int) -> np.ndarray:
    key = (n_lr, factor)
    if key not in _UPSAMPLE_CACHE:
        _UPSAMPLE_CACHE[key] = _upsample_matrix(n_lr, factor)
    return _UPSAMPLE_CACHE[key]


def upsample_bilinear_array(x: np.ndarray, factor: int) -> np.ndarray:
    """Plain-array bilinear upsampling by ``factor`` (separable)."""
    if factor == 1:
        return np.asarray(x).copy()
    if x.ndim != 3:
        raise ValueError(f"expected (C, h, w), got shape {x.shape}")
    uh = _upsample_matrix_cached(x.shape[1], factor).astype(x.dtype, copy=False)
    uw = _upsample_matrix_cached(x.shape[2], factor).astype(x.dtype, copy=False)
    tmp = np.einsum("Hh,chw->cHw", uh, x, optimize=True)
    return np.einsum("Ww,cHw->cHW", uw, tmp, optimize=True)


def upsample_bilinear(x: DTensor, factor: int) -> DTensor:
    """Bilinear upsampling as a differentiable primitive (exact adjoint)."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    xv = x.values
    if factor == 1:
        return x.tape._op(xv.copy(), (x,), lambda g: (g,))
    out = upsample_bilinear_array(xv, factor)
    uh = _upsample_matrix_cached(xv.shape[1], factor).astype(xv.dtype, copy=False)
    uw = _upsample_matrix_cached(xv.shape[2], factor).astype(xv.dtype, copy=False)

    def vjp(g):
        tmp = np.einsum("Hh,cHW->chW", uh, g, optimize=True)
        return (np.einsum("Ww,chW->chw", uw, tmp, optimize=True),)

    return x.tape._op(out, (x,), vjp)


@dataclass
class OptimizerState:
    """Adam with an L2 weight penalty folded into the gradients.

    The learning rate is multiplied by ``decay`` once per epoch (call
    :meth:`start_epoch` from the training loop).
    """

    lr: float = 1e-3
    decay: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-8
    step_count: int = 0
    epoch: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @property
    def current_lr(self) -> float:
        return self.lr * self.decay**self.epoch

    def start_epoch(self, epoch: int) -> None:
        self.epoch = epoch


def adam_step(state: OptimizerState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """One Adam update over a named parameter dict, in place."""
    state.step_count += 1
    t = state.step_count
    lr = state.current_lr
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        g = g + state.weight_decay * p
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return params
