"""A small reverse-mode differentiation engine over dense float64 matrices.

Every tensor is 2-D. Operations on tensors that need gradients are recorded
on the active :class:`Tape`; :func:`backward` walks the tape in reverse
insertion order. Sparse incidence is expressed through segment operations
(``segment_softmax`` / ``segment_sum``) over flat entry lists rather than
dense incidence products.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

DEBUG_FINITE = False


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_tape", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._tape: Tape | None = None
        self.id = -1
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a 1x1 tensor")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class Tape:
    """Append-only record of operations; insertion order is a topological order."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def record(self, t: Tensor) -> None:
        t.id = len(self.nodes)
        t._tape = self
        self.nodes.append(t)

    def release(self) -> None:
        for node in self.nodes:
            node._parents = ()
            node._backward = None
            node._tape = None
        self.nodes = []

    def dump(self) -> str:
        lines = []
        for t in self.nodes:
            parents = ", ".join(str(p.id) if p._tape is self else "leaf" for p in t._parents)
            lines.append(f"{t.id}: {t.name or 'op'} {t.shape} <- [{parents}]")
        return "\n".join(lines)


_tapes: list[Tape] = [Tape()]
_grad_enabled = [True]


def current_tape() -> Tape:
    return _tapes[-1]


@contextmanager
def tape():
    """Fresh tape for the duration of the block.

    On exit the recorded graph is released (values stay readable), so
    ``backward`` must be called inside the block.
    """
    t = Tape()
    _tapes.append(t)
    try:
        yield t
    finally:
        _tapes.pop()
        t.release()


@contextmanager
def no_grad():
    """Evaluate without recording; outputs never require gradients."""
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn, name: str) -> Tensor:
    if DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite output from {name}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = _grad_enabled[-1] and any(p.requires_grad for p in parents)
    out._parents = tuple(parents)
    out._backward = backward_fn if out.requires_grad else None
    out._tape = None
    out.id = -1
    out.name = name
    if out.requires_grad:
        current_tape().record(out)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def backward(out: Tensor, seed: np.ndarray | None = None) -> None:
    """Accumulate d(out)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if not out.requires_grad:
        return
    if out._tape is None:
        raise RuntimeError("backward called on a tensor that was not produced by a recorded forward pass")
    if seed is None:
        if out.data.size != 1:
            raise ShapeError("seed required for non-scalar output")
        seed = np.ones_like(out.data)
    tp = out._tape
    grads: dict[int, np.ndarray] = {out.id: np.asarray(seed, dtype=np.float64).reshape(out.shape)}
    for node in reversed(tp.nodes[: out.id + 1]):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if p._tape is tp and p._backward is not None:
                if p.id in grads:
                    grads[p.id] = grads[p.id] + pg
                else:
                    grads[p.id] = pg
            else:
                _accum(p, pg)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


# --- elementary ops -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape[1] == b.shape[0], f"matmul {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"add {a.shape} + {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"sub {a.shape} - {b.shape}")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Add a 1 x c row to every row of ``a``."""
    _check(b.shape == (1, a.shape[1]), f"bias {b.shape} for {a.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)), "add_bias")


def concat_cols(*parts: Tensor) -> Tensor:
    rows = parts[0].shape[0]
    _check(all(p.shape[0] == rows for p in parts), "concat_cols row mismatch")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _result(np.hstack([p.data for p in parts]), parts, bw, "concat_cols")


def row_mean_k(blocks: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of K equally shaped blocks."""
    shape = blocks[0].shape
    _check(all(b.shape == shape for b in blocks), "row_mean_k shape mismatch")
    k = len(blocks)
    data = sum(b.data for b in blocks) / k
    return _result(data, tuple(blocks), lambda g: tuple(g / k for _ in range(k)), "row_mean_k")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    x = a.data
    pos = x > 0
    out = np.where(pos, x, slope * x)
    return _result(out, (a,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    rows = a.shape[0]

    def bw(g):
        if g.shape[1] == 1:
            return (np.bincount(idx, weights=g[:, 0], minlength=rows).reshape(-1, 1),)
        M = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(rows, idx.size))
        return (np.asarray(M @ g),)

    return _result(a.data[idx], (a,), bw, "gather_rows")


def mul_rows(a: Tensor, col: Tensor) -> Tensor:
    """Scale row i of ``a`` by ``col[i, 0]``."""
    _check(col.shape == (a.shape[0], 1), f"mul_rows {a.shape} by {col.shape}")
    return _result(
        a.data * col.data,
        (a, col),
        lambda g: (g * col.data, (g * a.data).sum(axis=1, keepdims=True)),
        "mul_rows",
    )


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    rows = a.shape[0]

    def bw(g):
        out = np.zeros((rows, g.shape[1]))
        out[start:stop] = g
        return (out,)

    return _result(a.data[start:stop], (a,), bw, "slice_rows")


def row_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (a,), bw, "row_softmax")


def total(a: Tensor) -> Tensor:
    return _result(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(a.shape, g[0, 0]),), "total")


# --- segment ops ----------------------------------------------------------


class Segments:
    """Partition of ``len(ids)`` entries into ``num`` segments by integer id.

    Segments with no entries are allowed; they produce zero rows in
    :func:`segment_sum`.
    """

    def __init__(self, ids: np.ndarray, num: int):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= num):
            raise ShapeError("segment id out of range")
        self.ids = ids
        self.num = int(num)
        self.order = np.argsort(ids, kind="stable")
        sorted_ids = ids[self.order]
        self.starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]]) if ids.size else ids
        self.present = sorted_ids[self.starts] if ids.size else ids
        self.matrix = sp.csr_matrix(
            (np.ones(ids.size), (ids, np.arange(ids.size))), shape=(self.num, ids.size)
        )
        self.counts = np.bincount(ids, minlength=self.num)

    def __len__(self) -> int:
        return self.ids.size

    def reduce_max(self, x: np.ndarray) -> np.ndarray:
        out = np.full(self.num, -np.inf)
        if self.ids.size:
            out[self.present] = np.maximum.reduceat(x[self.order], self.starts)
        return out

    def sum(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x


def segment_softmax(logits: Tensor, seg: Segments) -> Tensor:
    """Softmax of a column of logits within each segment."""
    _check(logits.shape == (len(seg), 1), f"segment_softmax logits {logits.shape} for {len(seg)} entries")
    z = logits.data[:, 0]
    shifted = z - seg.reduce_max(z)[seg.ids]
    e = np.exp(shifted)
    y = e / seg.sum(e)[seg.ids]
    y = y.reshape(-1, 1)

    def bw(g):
        dot = seg.sum((g * y)[:, 0])[seg.ids].reshape(-1, 1)
        return (y * (g - dot),)

    return _result(y, (logits,), bw, "segment_softmax")


def segment_sum(values: Tensor, seg: Segments, weights: np.ndarray | None = None) -> Tensor:
    """Per-segment weighted row sums: ``out[s] = sum_{i: id_i = s} w_i * values[i]``.

    ``weights`` are constants (not differentiated).
    """
    _check(values.shape[0] == len(seg), f"segment_sum values {values.shape} for {len(seg)} entries")
    if weights is None:
        M = seg.matrix
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        _check(w.size == len(seg), "segment_sum weight length")
        M = sp.csr_matrix((w, (seg.ids, np.arange(seg.ids.size))), shape=(seg.num, seg.ids.size))
    MT = M.T.tocsr()
    return _result(np.asarray(M @ values.data), (values,), lambda g: (np.asarray(MT @ g),), "segment_sum")


def attend(
    values: Tensor,
    src: np.ndarray,
    alpha: Tensor,
    seg: Segments,
    weights: np.ndarray | None = None,
) -> Tensor:
    """Fused ``segment_sum(mul_rows(gather_rows(values, src), alpha), seg, weights)``.

    ``out[s] = sum_{i: id_i = s} w_i * alpha_i * values[src_i]`` without
    materializing the gathered entry matrix in the forward pass.
    """
    src = np.asarray(src, dtype=np.int64)
    _check(alpha.shape == (len(seg), 1) and src.size == len(seg), "attend entry count mismatch")
    w = np.ones(len(seg)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    coef = w * alpha.data[:, 0]
    M = sp.csr_matrix((coef, (seg.ids, src)), shape=(seg.num, values.shape[0]))
    MT = M.T.tocsr()

    def bw(g):
        d_alpha = w * np.einsum("ij,ij->i", g[seg.ids], values.data[src])
        return (np.asarray(MT @ g), d_alpha.reshape(-1, 1))

    return _result(np.asarray(M @ values.data), (values, alpha), bw, "attend")


# --- losses ---------------------------------------------------------------


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Sum of squared differences (squared Frobenius norm of ``a - b``)."""
    _check(a.shape == b.shape, f"mse {a.shape} vs {b.shape}")
    d = a.data - b.data
    return _result(np.array([[np.sum(d * d)]]), (a, b), lambda g: (2 * g[0, 0] * d, -2 * g[0, 0] * d), "mse")


PROB_CLAMP = 1e-12


def weighted_ce(probs: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """``sum_i w_i * -log(p_i[y_i])`` with probabilities clamped to [1e-12, 1 - 1e-12]."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    n = probs.shape[0]
    _check(labels.size == n and weights.size == n, "weighted_ce length mismatch")
    rows = np.arange(n)
    p = probs.data[rows, labels]
    pc = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    inside = (p >= PROB_CLAMP) & (p <= 1 - PROB_CLAMP)
    value = -np.sum(weights * np.log(pc))

    def bw(g):
        out = np.zeros(probs.shape)
        out[rows, labels] = np.where(inside, -weights / pc, 0.0) * g[0, 0]
        return (out,)

    return _result(np.array([[value]]), (probs,), bw, "weighted_ce")


def l2_penalty(params: Iterable[Tensor]) -> Tensor:
    """``sum over params of ||w||^2``."""
    params = tuple(params)
    value = sum(float(np.sum(p.data * p.data)) for p in params)
    return _result(
        np.array([[value]]), params, lambda g: tuple(2 * g[0, 0] * p.data for p in params), "l2_penalty"
    )


# --- verification -----------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    checked: int
    worst: str
    passed: bool
    max_raw_rel_error: float = 0.0  # without the rounding-noise exemption, for reporting


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    tol: float = 1e-5,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f()`` with central finite differences.

    Relative error per entry is ``|a - b| / max(|a|, |b|, floor)``. Entries
    whose absolute error is below the rounding noise of the difference
    quotient, ``64 * machine_eps * max(|f(x +- eps)|, 1) / eps``, count as
    exact: there the finite difference carries no information beyond it.
    Parameters are perturbed in place and restored.
    """
    for p in params:
        p.zero_grad()
    with tape():
        out = f()
        backward(out)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    worst_rel, worst_abs, worst_raw, worst = 0.0, 0.0, 0.0, ""
    checked = 0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with tape():
                fp = f().item()
            flat[i] = orig - eps
            with tape():
                fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            ana = analytic[pi].reshape(-1)[i]
            abs_err = abs(num - ana)
            noise = 64 * np.finfo(float).eps * max(abs(fp), abs(fm), 1.0) / eps
            raw = abs_err / max(abs(num), abs(ana), floor)
            rel = 0.0 if abs_err <= noise else raw
            worst_raw = max(worst_raw, raw)
            checked += 1
            worst_abs = max(worst_abs, abs_err)
            if rel > worst_rel:
                worst_rel = rel
                worst = f"{p.name or pi}[{i}] analytic={ana:.6g} numeric={num:.6g}"
    for p in params:
        p.zero_grad()
    return GradCheckReport(float(worst_rel), float(worst_abs), checked, worst, bool(worst_rel <= tol), float(worst_raw))
