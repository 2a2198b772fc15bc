"""Minimal reverse-mode autodiff over numpy arrays, plus the NN building blocks
(dense layers, FiLM, Adam) used by every learnable component.

Design notes:
  * A `Tape` records every op in creation order, so the node list is
    topologically sorted by construction and the reverse sweep is a plain
    reversed loop.
  * Backward rules are written in terms of engine ops.  During an ordinary
    backward pass recording is paused (raw numpy speed); with
    ``create_graph=True`` the same rules get taped, which is what the
    eikonal term needs (gradient-of-gradient).
  * Only the shapes/ops this model needs are supported; there is no general
    broadcasting beyond numpy's, and no GPU path.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as _sp

from .errors import DimensionError, TrainingError

# --------------------------------------------------------------------------
# global precision switch: float32 for training throughput, float64 for
# finite-difference gradient checks.

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32


def set_default_dtype(name: str) -> None:
    global _default_dtype
    if name not in _DTYPES:
        raise ValueError(f"unknown dtype {name!r}")
    _default_dtype = _DTYPES[name]


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the default float width (used by gradcheck)."""
    global _default_dtype
    saved = _default_dtype
    set_default_dtype(name)
    try:
        yield
    finally:
        _default_dtype = saved


# --------------------------------------------------------------------------
# tensors and tape

class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind == "f" and arr.dtype != _default_dtype:
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}, name={self.name})"

    # operator sugar; scalars stay python floats inside the closures
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Op record for one forward pass.  Nodes are (out, parents, vjp_fn)."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._index: dict[int, int] = {}

    # -- context management ------------------------------------------------
    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.remove(self)
        return False

    # -- recording ---------------------------------------------------------
    def record(self, out: Tensor, parents: tuple[Tensor, ...], vjp: Callable) -> None:
        self._index[id(out)] = len(self.nodes)
        self.nodes.append((out, parents, vjp))

    # -- reverse sweep -----------------------------------------------------
    def gradients(
        self,
        loss: Tensor,
        wrt: Sequence[Tensor] | None = None,
        create_graph: bool = False,
    ) -> dict[int, Tensor]:
        """Reverse sweep from `loss`; returns {id(tensor): grad} for every
        requires_grad leaf (or only those in `wrt` if given)."""
        if loss.size != 1:
            raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
        start = self._index.get(id(loss))
        if start is None:
            raise ValueError("loss was not computed under this tape")

        grads: dict[int, Tensor] = {
            id(loss): Tensor(np.ones(loss.shape, dtype=loss.data.dtype))
        }
        wanted = None if wrt is None else {id(t) for t in wrt}
        out: dict[int, Tensor] = {}

        ctx = contextlib.nullcontext() if create_graph else pause_recording()
        with ctx:
            for out_t, parents, vjp in reversed(self.nodes[: start + 1]):
                g = grads.pop(id(out_t), None)
                if g is None:
                    continue
                pgrads = vjp(g)
                for p, pg in zip(parents, pgrads):
                    if pg is None:
                        continue
                    if not (p.requires_grad or id(p) in self._index):
                        continue
                    prev = grads.get(id(p))
                    grads[id(p)] = pg if prev is None else add(prev, pg)
                    if p.requires_grad and id(p) not in self._index:
                        # leaf parameter: keep the accumulated grad
                        out[id(p)] = grads[id(p)]
        if wanted is not None:
            out = {k: v for k, v in out.items() if k in wanted}
        return out

    def grad(self, loss: Tensor, wrt: Sequence[Tensor], create_graph: bool = False):
        """Gradients of `loss` w.r.t. an explicit list of tensors (which may be
        interior nodes, e.g. query coordinates for the eikonal term)."""
        if loss.size != 1:
            raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
        start = self._index.get(id(loss))
        if start is None:
            raise ValueError("loss was not computed under this tape")
        grads: dict[int, Tensor] = {
            id(loss): Tensor(np.ones(loss.shape, dtype=loss.data.dtype))
        }
        wanted = {id(t) for t in wrt}
        ctx = contextlib.nullcontext() if create_graph else pause_recording()
        with ctx:
            for out_t, parents, vjp in reversed(self.nodes[: start + 1]):
                g = grads.get(id(out_t))
                if g is None:
                    continue
                if id(out_t) not in wanted:
                    del grads[id(out_t)]
                pgrads = vjp(g)
                for p, pg in zip(parents, pgrads):
                    if pg is None:
                        continue
                    if not (p.requires_grad or id(p) in self._index or id(p) in wanted):
                        continue
                    prev = grads.get(id(p))
                    grads[id(p)] = pg if prev is None else add(prev, pg)
        result = []
        for t in wrt:
            g = grads.get(id(t))
            if g is None:
                g = Tensor(np.zeros(t.shape, dtype=t.data.dtype))
            result.append(g)
        return result

    def close(self):
        self.nodes.clear()
        self._index.clear()


_tape_stack: list[Tape] = []
_paused = 0


def active_tape() -> Tape | None:
    if _paused or not _tape_stack:
        return None
    return _tape_stack[-1]


@contextlib.contextmanager
def pause_recording():
    global _paused
    _paused += 1
    try:
        yield
    finally:
        _paused -= 1


def forward_backward(tape: Tape, loss: Tensor) -> dict[int, Tensor]:
    """Gradient map for every parameter node reachable from `loss`.

    Non-parameter leaves are skipped; keys are `id(param)`."""
    return tape.gradients(loss)


def _record(out: Tensor, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    tape = active_tape()
    if tape is not None and any(
        p.requires_grad or id(p) in tape._index for p in parents
    ):
        out.requires_grad = False  # outputs are graph nodes, not leaves
        tape.record(out, parents, vjp)
    return out


# --------------------------------------------------------------------------
# broadcasting helper: reduce g to `shape` by summing broadcast axes

def _sum_to_shape(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    gnd = len(g.shape)
    snd = len(shape)
    axes = tuple(range(gnd - snd))
    axes += tuple(
        i + (gnd - snd) for i, n in enumerate(shape) if n == 1 and g.shape[i + gnd - snd] != 1
    )
    out = sum_axis(g, axis=axes, keepdims=False)
    return reshape(out, shape)


# --------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        a = as_tensor(a)
        out = Tensor(a.data + b)
        return _record(out, (a,), lambda g: (g,))
    if isinstance(a, (int, float)):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return _sum_to_shape(g, ash), _sum_to_shape(g, bsh)

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        a = as_tensor(a)
        out = Tensor(a.data - b)
        return _record(out, (a,), lambda g: (g,))
    if isinstance(a, (int, float)):
        b = as_tensor(b)
        out = Tensor(a - b.data)
        return _record(out, (b,), lambda g: (neg(g),))
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return _sum_to_shape(g, ash), _sum_to_shape(neg(g), bsh)

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        a = as_tensor(a)
        out = Tensor(a.data * b)
        return _record(out, (a,), lambda g: (mul(g, b),))
    if isinstance(a, (int, float)):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return _sum_to_shape(mul(g, b), ash), _sum_to_shape(mul(g, a), bsh)

    return _record(out, (a, b), vjp)


def div(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        return mul(a, 1.0 / b)
    a = as_tensor(a) if not isinstance(a, (int, float)) else a
    b = as_tensor(b)
    if isinstance(a, (int, float)):
        out = Tensor(a / b.data)

        def vjp_s(g):
            return (neg(div(mul(g, a), mul(b, b))),)

        return _record(out, (b,), vjp_s)
    out = Tensor(a.data / b.data)
    ash, bsh = a.shape, b.shape

    def vjp(g):
        ga = _sum_to_shape(div(g, b), ash)
        gb = _sum_to_shape(neg(div(mul(g, out), b)), bsh)
        return ga, gb

    return _record(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (neg(g),))


def pow_const(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data**p)

    def vjp(g):
        return (mul(g, mul(pow_const(a, p - 1.0), float(p))),)

    return _record(out, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))

    def vjp(g):
        return (mul(g, out),)

    return _record(out, (a,), vjp)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (div(g, a),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.data))

    def vjp(g):
        return (div(g, mul(out, 2.0)),)

    return _record(out, (a,), vjp)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.abs(a.data))
    sign = np.sign(a.data)
    return _record(out, (a,), lambda g: (mul(g, Tensor(sign)),))


def sin(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sin(a.data))
    return _record(out, (a,), lambda g: (mul(g, cos(a)),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.cos(a.data))
    return _record(out, (a,), lambda g: (neg(mul(g, sin(a))),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0))
    mask = (a.data > 0).astype(a.data.dtype)
    return _record(out, (a,), lambda g: (mul(g, Tensor(mask)),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.logaddexp(0.0, a.data))
    return _record(out, (a,), lambda g: (mul(g, sigmoid(a)),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    out = Tensor(out_data)

    def vjp(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    return _record(out, (a,), vjp)


# --------------------------------------------------------------------------
# shape / reduction ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (reshape(g, old),))


def transpose2(a) -> Tensor:
    """Transpose of a 2-D tensor."""
    a = as_tensor(a)
    out = Tensor(a.data.T)
    return _record(out, (a,), lambda g: (transpose2(g),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    out = Tensor(np.broadcast_to(a.data, shape).copy())
    return _record(out, (a,), lambda g: (_sum_to_shape(g, old),))


def sum_axis(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    ash = a.shape

    def vjp(g):
        gd = g
        if axis is not None and not keepdims:
            ax = axis if isinstance(axis, tuple) else (axis,)
            ax = tuple(i % len(ash) for i in ax)
            shp = tuple(1 if i in ax else n for i, n in enumerate(ash))
            gd = reshape(gd, shp)
        elif axis is None and not keepdims:
            gd = reshape(gd, (1,) * len(ash))
        return (broadcast_to(gd, ash),)

    return _record(out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod(
        [a.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(sum_axis(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def concat(parts: Iterable, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]

    def vjp(g):
        grads = []
        start = 0
        for s in sizes:
            grads.append(slice_axis(g, axis, start, start + s))
            start += s
        return tuple(grads)

    return _record(out, tuple(parts), vjp)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    idx = [slice(None)] * len(a.shape)
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(a.data[idx])
    ash = a.shape

    def vjp(g):
        pads = []
        before = start
        after = ash[axis] - stop
        if before == 0 and after == 0:
            return (g,)
        gshape = list(g.shape)
        zeros_before = None
        if before:
            s = list(gshape)
            s[axis] = before
            zeros_before = Tensor(np.zeros(s, dtype=g.data.dtype))
        zeros_after = None
        if after:
            s = list(gshape)
            s[axis] = after
            zeros_after = Tensor(np.zeros(s, dtype=g.data.dtype))
        pieces = [p for p in (zeros_before, g, zeros_after) if p is not None]
        return (concat(pieces, axis=axis),)

    return _record(out, (a,), vjp)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise DimensionError("matmul supports 2-D operands only")
    out = Tensor(a.data @ b.data)

    def vjp(g):
        return matmul(g, transpose2(b)), matmul(transpose2(a), g)

    return _record(out, (a, b), vjp)


def cumsum_last(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.cumsum(a.data, axis=-1))

    def vjp(g):
        return (flip_last_cumsum(g),)

    return _record(out, (a,), vjp)


def flip_last_cumsum(a) -> Tensor:
    """Reversed cumulative sum along the last axis (vjp partner of cumsum)."""
    a = as_tensor(a)
    out = Tensor(np.flip(np.cumsum(np.flip(a.data, -1), axis=-1), -1))

    def vjp(g):
        return (cumsum_last(g),)

    return _record(out, (a,), vjp)


# --------------------------------------------------------------------------
# gather / scatter family (first-axis row indexing, integer index arrays are
# constants as far as the graph is concerned)

def gather_rows(table, idx: np.ndarray) -> Tensor:
    table = as_tensor(table)
    idx = np.asarray(idx)
    out = Tensor(table.data[idx])
    nrows = table.shape[0]

    def vjp(g):
        return (scatter_rows(g, idx, nrows),)

    return _record(out, (table,), vjp)


def scatter_rows(values, idx: np.ndarray, nrows: int) -> Tensor:
    """Sum `values[j]` into row idx[j] of a zero (nrows, ...) array."""
    values = as_tensor(values)
    idx = np.asarray(idx)
    tail = values.shape[len(idx.shape):]
    flat_idx = idx.reshape(-1)
    flat_vals = values.data.reshape((flat_idx.size,) + tail)
    out_data = np.zeros((nrows,) + tail, dtype=values.data.dtype)
    if tail and tail[-1] <= 32 and len(tail) == 1:
        # channel-wise bincount beats np.add.at for narrow payloads
        for c in range(tail[0]):
            out_data[:, c] = np.bincount(
                flat_idx, weights=flat_vals[:, c], minlength=nrows
            ).astype(out_data.dtype)
    elif not tail:
        out_data[:] = np.bincount(
            flat_idx, weights=flat_vals, minlength=nrows
        ).astype(out_data.dtype)
    else:
        np.add.at(out_data, flat_idx, flat_vals)
    out = Tensor(out_data)

    def vjp(g):
        return (gather_rows(g, idx),)

    return _record(out, (values,), vjp)


# --------------------------------------------------------------------------
# fused anchor-aggregation kernels.  idx is (M, K) int rows into a (P, C)
# table; a is (M, K) weights.  The three ops are mutual vjps, so
# gradient-of-gradient stays inside the set.

def _csr(a_data: np.ndarray, idx: np.ndarray, ncols: int):
    m, k = idx.shape
    indptr = np.arange(0, m * k + 1, k)
    return _sp.csr_matrix(
        (a_data.reshape(-1), idx.reshape(-1), indptr), shape=(m, ncols)
    )


def anchor_weighted_sum(table, a, idx: np.ndarray) -> Tensor:
    """out[m] = sum_k a[m,k] * table[idx[m,k]]  -> (M, C)"""
    table, a = as_tensor(table), as_tensor(a)
    idx = np.asarray(idx)
    mat = _csr(a.data, idx, table.shape[0])
    out = Tensor(np.asarray(mat @ table.data))
    nrows = table.shape[0]

    def vjp(g):
        gt = anchor_weighted_scatter(g, a, idx, nrows)
        ga = anchor_pair_dot(g, table, idx)
        return gt, ga

    return _record(out, (table, a), vjp)


def anchor_weighted_scatter(values, a, idx: np.ndarray, nrows: int) -> Tensor:
    """out[p] = sum_{m,k: idx[m,k]=p} a[m,k] * values[m]  -> (nrows, C)"""
    values, a = as_tensor(values), as_tensor(a)
    idx = np.asarray(idx)
    mat = _csr(a.data, idx, nrows)
    out = Tensor(np.asarray(mat.T @ values.data))

    def vjp(g):
        gv = anchor_weighted_sum(g, a, idx)
        ga = anchor_pair_dot(values, g, idx)
        return gv, ga

    return _record(out, (values, a), vjp)


def anchor_pair_dot(values, table, idx: np.ndarray) -> Tensor:
    """out[m,k] = values[m] . table[idx[m,k]]  -> (M, K)"""
    values, table = as_tensor(values), as_tensor(table)
    idx = np.asarray(idx)
    gathered = table.data[idx]  # (M, K, C)
    out = Tensor(np.einsum("mc,mkc->mk", values.data, gathered))
    nrows = table.shape[0]

    def vjp(g):
        gv = anchor_weighted_sum(table, g, idx)
        gt = anchor_weighted_scatter(values, g, idx, nrows)
        return gv, gt

    return _record(out, (values, table), vjp)


def affine_rows(x, rot: np.ndarray, trans: np.ndarray | None = None) -> Tensor:
    """Apply constant per-row affine maps: out[m(,k)] = rot[m(,k)] @ x[m] + trans.

    rot is (M, 3, 3) for one map per row, or (M, K, 3, 3) to expand x (M, 3)
    against K maps per row.  rot and trans are graph constants."""
    x = as_tensor(x)
    rot = np.asarray(rot)
    if rot.ndim == 3:
        out_data = np.einsum("mde,me->md", rot, x.data)
    elif rot.ndim == 4:
        out_data = np.einsum("mkde,me->mkd", rot, x.data)
    else:
        raise DimensionError("affine_rows expects rot of rank 3 or 4")
    if trans is not None:
        out_data = out_data + trans
    out = Tensor(out_data)

    def vjp(g):
        return (affine_rows_adjoint(g, rot),)

    return _record(out, (x,), vjp)


def affine_rows_adjoint(g, rot: np.ndarray) -> Tensor:
    """Adjoint of affine_rows for the same constant maps (its vjp partner)."""
    g = as_tensor(g)
    rot = np.asarray(rot)
    if rot.ndim == 3:
        out = Tensor(np.einsum("mde,md->me", rot, g.data))
    else:
        out = Tensor(np.einsum("mkde,mkd->me", rot, g.data))

    def vjp(h):
        return (affine_rows(h, rot),)

    return _record(out, (g,), vjp)


# --------------------------------------------------------------------------
# composites

def square(a) -> Tensor:
    a = as_tensor(a)
    return mul(a, a)


def softmax_rows(logits) -> Tensor:
    """Row-wise softmax along the last axis (numerically shifted)."""
    logits = as_tensor(logits)
    shift = logits.data.max(axis=-1, keepdims=True)
    e = exp(sub(logits, Tensor(shift)))
    return div(e, sum_axis(e, axis=-1, keepdims=True))


def norm_rows(x, eps: float = 1e-24) -> Tensor:
    """Euclidean norm along the last axis; eps keeps the gradient finite at 0."""
    return sqrt(add(sum_axis(square(x), axis=-1), eps))


def clamp01_scaled(t, hi: float) -> Tensor:
    """Clamp to [0, hi] as a relu composite (zero gradient outside)."""
    t = as_tensor(t)
    return sub(relu(t), relu(sub(t, hi)))


def film_apply(hidden: Tensor, params: "FiLMParams") -> Tensor:
    """Feature-wise linear modulation: gamma * h + delta."""
    hidden = as_tensor(hidden)
    if hidden.shape[-1] != params.gamma.shape[-1]:
        raise DimensionError(
            f"FiLM width {params.gamma.shape[-1]} != hidden width {hidden.shape[-1]}"
        )
    return add(mul(params.gamma, hidden), params.delta)


class FiLMParams:
    """Per-layer scale/shift conditioning generated from a pose code."""

    def __init__(self, gamma: Tensor, delta: Tensor):
        if gamma.shape[-1] != delta.shape[-1]:
            raise DimensionError("gamma/delta width mismatch")
        self.gamma = gamma
        self.delta = delta


# --------------------------------------------------------------------------
# layers and parameters

_ACTIVATIONS = {
    "relu": relu,
    "softplus": softplus,
    "sine": sin,
    "none": lambda x: x,
}


class DenseLayer:
    """Affine layer with an activation tag; weights (out, in), bias (out,)."""

    def __init__(
        self,
        n_in: int,
        n_out: int,
        activation: str = "none",
        rng: np.random.Generator | None = None,
        zero_init: bool = False,
        name: str = "dense",
    ):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.name = name
        if zero_init:
            w = np.zeros((n_out, n_in))
            b = np.zeros(n_out)
        else:
            if rng is None:
                raise ValueError("rng required unless zero_init")
            bound = 1.0 / math.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
            b = rng.uniform(-bound, bound, size=n_out)
        self.weight = Tensor(w, requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(b, requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.weight.shape[1]:
            raise DimensionError(
                f"{self.name}: input width {x.shape[-1]} != {self.weight.shape[1]}"
            )
        lead = x.shape[:-1]
        flat = reshape(x, (-1, x.shape[-1])) if len(x.shape) != 2 else x
        h = add(matmul(flat, transpose2(self.weight)), self.bias)
        if len(x.shape) != 2:
            h = reshape(h, lead + (self.weight.shape[0],))
        return _ACTIVATIONS[self.activation](h)

    def parameters(self) -> dict[str, Tensor]:
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}


# --------------------------------------------------------------------------
# optimizer

class AdamState:
    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard Adam with bias correction; updates params in place."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if g.shape != p.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name}"
            )
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)


# --------------------------------------------------------------------------
# finite-difference gradient checking

def finite_difference_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    rng: np.random.Generator,
    entries_per_param: int = 4,
    step: float = 1e-5,
) -> dict[str, float]:
    """Relative error between reverse-mode and central-difference gradients.

    `loss_fn` must rebuild the forward pass from the current parameter values
    on every call.  Returns {param name: relative error} over a random sample
    of entries per parameter."""
    def eval_loss() -> float:
        # a throwaway tape so closures that take inner spatial gradients
        # (eikonal) still work during pure forward evaluation
        with Tape():
            return loss_fn().item()

    with Tape() as tape:
        loss = loss_fn()
        grads = tape.gradients(loss, wrt=list(params.values()))
    result: dict[str, float] = {}
    for name, p in params.items():
        g = grads.get(id(p))
        gdata = np.zeros_like(p.data) if g is None else g.data
        flat = p.data.reshape(-1)
        n = min(entries_per_param, flat.size)
        picks = rng.choice(flat.size, size=n, replace=False)
        num = 0.0
        den = 0.0
        for i in picks:
            saved = flat[i]
            flat[i] = saved + step
            lp = eval_loss()
            flat[i] = saved - step
            lm = eval_loss()
            flat[i] = saved
            fd = (lp - lm) / (2 * step)
            ad = float(gdata.reshape(-1)[i])
            num += abs(ad - fd)
            den += abs(ad) + abs(fd)
        result[name] = num / max(den, 1e-12)
    return result
