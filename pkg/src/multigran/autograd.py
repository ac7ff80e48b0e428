"""Reverse-mode automatic differentiation over a flat operation tape.

Values are dense float64 numpy arrays. Operations execute eagerly; while a
`Tape` is active (used as a context manager) each operation appends a record
holding its inputs and a backward rule. `backward` zeroes the gradients of
every ancestor of the root, seeds the root with 1.0 and replays the tape in
reverse, visiting each record exactly once and accumulating (never
overwriting) gradients, so shared subexpressions are handled correctly.

Calling `backward` twice on the same root yields identical gradients because
each call re-zeroes the ancestor set first.

Outside any tape, the same functions compute values without recording, which
is the inference path.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

_ids = itertools.count(1)
_tls = threading.local()


class Tensor:
    """Dense float64 array plus a lazily allocated gradient slot."""

    __slots__ = ("values", "grad", "node_id")

    def __init__(self, values) -> None:
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.node_id: int = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def accumulate(self, delta) -> None:
        if self.grad is None:
            self.grad = np.array(np.broadcast_to(delta, self.values.shape),
                                 dtype=np.float64)
        else:
            self.grad += delta

    def gradient(self) -> np.ndarray:
        """The accumulated gradient; zeros if this tensor was never reached."""
        if self.grad is None:
            return np.zeros_like(self.values)
        return self.grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, node_id={self.node_id})"


def tensor(values) -> Tensor:
    """Create a leaf tensor (parameter or constant)."""
    return Tensor(values)


class _Record:
    __slots__ = ("output", "inputs", "rule")

    def __init__(self, output: Tensor, inputs: tuple, rule: Callable) -> None:
        self.output = output
        self.inputs = inputs
        self.rule = rule


class Tape:
    """Append-only record of executed operations, in execution order.

    The order is topological by construction: an operation's inputs always
    exist before the operation runs. One tape per training replica; tapes are
    never shared between threads.
    """

    def __init__(self, check_finite: bool = True) -> None:
        self.records: list[_Record] = []
        self.check_finite = check_finite

    def __enter__(self) -> "Tape":
        stack = getattr(_tls, "stack", None)
        if stack is None:
            stack = _tls.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tls.stack.pop()

    def __len__(self) -> int:
        return len(self.records)


def active_tape() -> Optional[Tape]:
    stack = getattr(_tls, "stack", None)
    return stack[-1] if stack else None


def _emit(values: np.ndarray, inputs: Sequence[Tensor], rule: Callable) -> Tensor:
    out = Tensor(values)
    tape = active_tape()
    if tape is not None:
        if tape.check_finite and not np.all(np.isfinite(out.values)):
            raise DomainError("operation produced non-finite values")
        tape.records.append(_Record(out, tuple(inputs), rule))
    return out


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 1-D/2-D operands with standard contraction."""
    av, bv = a.values, b.values
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise DimensionError(f"matmul needs 1-D or 2-D operands, got {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {av.shape} @ {bv.shape}")
    out = av @ bv

    def rule(g):
        a2 = av if av.ndim == 2 else av[None, :]
        b2 = bv if bv.ndim == 2 else bv[:, None]
        g2 = np.asarray(g, dtype=np.float64).reshape(a2.shape[0], b2.shape[1])
        a.accumulate((g2 @ b2.T).reshape(av.shape))
        b.accumulate((a2.T @ g2).reshape(bv.shape))

    return _emit(out, (a, b), rule)


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.values.shape != b.values.shape:
        raise DimensionError(f"{op} needs identical shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)

    def rule(g):
        a.accumulate(g)
        b.accumulate(g)

    return _emit(a.values + b.values, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    av, bv = a.values, b.values

    def rule(g):
        a.accumulate(g * bv)
        b.accumulate(g * av)

    return _emit(av * bv, (a, b), rule)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a plain Python constant."""
    factor = float(factor)

    def rule(g):
        a.accumulate(g * factor)

    return _emit(a.values * factor, (a,), rule)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.values)

    def rule(g):
        a.accumulate(g * (1.0 - out * out))

    return _emit(out, (a,), rule)


def sigmoid(a: Tensor) -> Tensor:
    # 0.5 * (1 + tanh(x/2)) is overflow-free on both tails.
    out = 0.5 * (1.0 + np.tanh(0.5 * a.values))

    def rule(g):
        a.accumulate(g * out * (1.0 - out))

    return _emit(out, (a,), rule)


_ELEMENTWISE = {"add": add, "mul": mul, "tanh": tanh, "sigmoid": sigmoid}


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Dispatch by name over the supported elementwise operations."""
    if op not in _ELEMENTWISE:
        raise ContractError(f"unknown elementwise op {op!r}")
    fn = _ELEMENTWISE[op]
    if op in ("add", "mul"):
        if b is None:
            raise ContractError(f"{op} is binary")
        return fn(a, b)
    if b is not None:
        raise ContractError(f"{op} is unary")
    return fn(a)


def rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table; backward scatter-adds into the table."""
    idx = np.asarray(ids, dtype=np.intp)
    if table.values.ndim != 2:
        raise DimensionError("rows expects a 2-D table")
    if idx.size and (idx.min() < 0 or idx.max() >= table.values.shape[0]):
        raise ContractError("row index out of range")

    def rule(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.values)
        np.add.at(table.grad, idx, g)

    return _emit(table.values[idx], (table,), rule)


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise DimensionError("transpose expects a 2-D tensor")

    def rule(g):
        a.accumulate(g.T)

    return _emit(a.values.T.copy(), (a,), rule)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.values.shape

    def rule(g):
        a.accumulate(np.asarray(g).reshape(orig))

    return _emit(a.values.reshape(shape).copy(), (a,), rule)


def narrow(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice along one axis."""
    sl = [slice(None)] * a.values.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def rule(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.values)
        a.grad[sl] += g

    return _emit(a.values[sl].copy(), (a,), rule)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two matrices along columns."""
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2 or av.shape[0] != bv.shape[0]:
        raise DimensionError(f"concat_cols got {av.shape} and {bv.shape}")
    split = av.shape[1]

    def rule(g):
        a.accumulate(g[:, :split])
        b.accumulate(g[:, split:])

    return _emit(np.concatenate((av, bv), axis=1), (a, b), rule)


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    if not parts:
        raise ContractError("stack needs at least one tensor")
    first = parts[0].values.shape
    for p in parts[1:]:
        if p.values.shape != first:
            raise DimensionError("stack needs identical shapes")

    def rule(g):
        for i, p in enumerate(parts):
            p.accumulate(g[i])

    return _emit(np.stack([p.values for p in parts]), tuple(parts), rule)


def total(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""

    def rule(g):
        a.accumulate(np.broadcast_to(g, a.values.shape))

    return _emit(np.asarray(a.values.sum()), (a,), rule)


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a vector to every row of a matrix."""
    if m.values.ndim != 2 or v.values.ndim != 1 or m.values.shape[1] != v.values.shape[0]:
        raise DimensionError(f"add_rowvec got {m.shape} and {v.shape}")

    def rule(g):
        m.accumulate(g)
        v.accumulate(g.sum(axis=0))

    return _emit(m.values + v.values[None, :], (m, v), rule)


def where_mask(mask, a: Tensor, b: Tensor) -> Tensor:
    """mask * a + (1 - mask) * b with a constant 0/1 mask (broadcastable)."""
    _require_same_shape("where_mask", a, b)
    m = np.asarray(mask, dtype=np.float64)

    def rule(g):
        a.accumulate(g * m)
        b.accumulate(g * (1.0 - m))

    return _emit(m * a.values + (1.0 - m) * b.values, (a, b), rule)


def block_logits(contexts: Tensor, responses: Tensor, k: int) -> Tensor:
    """Per-example inner products: out[b, j] = contexts[b] . responses[b*k + j]."""
    cv, rv = contexts.values, responses.values
    if cv.ndim != 2 or rv.ndim != 2 or cv.shape[1] != rv.shape[1]:
        raise DimensionError(f"block_logits got {cv.shape} and {rv.shape}")
    n = cv.shape[0]
    if rv.shape[0] != n * k:
        raise DimensionError(f"block_logits needs {n * k} response rows, got {rv.shape[0]}")
    r3 = rv.reshape(n, k, cv.shape[1])
    out = np.einsum("bh,bkh->bk", cv, r3)

    def rule(g):
        contexts.accumulate(np.einsum("bk,bkh->bh", g, r3))
        responses.accumulate(np.einsum("bk,bh->bkh", g, cv).reshape(rv.shape))

    return _emit(out, (contexts, responses), rule)


def softmax_cross_entropy(logits: Tensor, target_index: int) -> Tensor:
    """-log softmax(logits)[target], stabilised by max subtraction."""
    z = logits.values
    if z.ndim != 1:
        raise DimensionError("softmax_cross_entropy expects 1-D logits")
    if z.size == 0:
        raise DomainError("softmax_cross_entropy on empty logits")
    if not 0 <= target_index < z.size:
        raise ContractError(f"target index {target_index} outside [0, {z.size})")
    shifted = z - z.max()
    lse = np.log(np.exp(shifted).sum())
    loss = lse - shifted[target_index]

    def rule(g):
        p = np.exp(shifted - lse)
        p[target_index] -= 1.0
        logits.accumulate(g * p)

    return _emit(np.asarray(loss), (logits,), rule)


def softmax_cross_entropy_rows(logits: Tensor, target_indices) -> Tensor:
    """Row-wise softmax cross-entropy; returns one loss per row."""
    z = logits.values
    if z.ndim != 2:
        raise DimensionError("softmax_cross_entropy_rows expects 2-D logits")
    t = np.asarray(target_indices, dtype=np.intp)
    if t.shape != (z.shape[0],):
        raise DimensionError("one target per row required")
    if t.size and (t.min() < 0 or t.max() >= z.shape[1]):
        raise ContractError("target index outside logit range")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[np.arange(z.shape[0]), t]

    def rule(g):
        p = np.exp(shifted - lse[:, None])
        p[np.arange(z.shape[0]), t] -= 1.0
        logits.accumulate(p * np.asarray(g)[:, None])

    return _emit(losses, (logits,), rule)


def sigmoid_binary_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Elementwise BCE on sigmoid(logits) against constant 0/1 targets.

    Computed as max(z, 0) - z*y + log1p(exp(-|z|)), which is stable on both
    tails; the gradient is sigmoid(z) - y.
    """
    z = logits.values
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != z.shape:
        raise DimensionError(f"targets shape {y.shape} != logits shape {z.shape}")
    out = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))

    def rule(g):
        logits.accumulate(g * (0.5 * (1.0 + np.tanh(0.5 * z)) - y))

    return _emit(out, (logits,), rule)


# ---------------------------------------------------------------------------
# backward


def backward(root: Tensor) -> None:
    """Populate gradients of every tape ancestor of a scalar root."""
    tape = active_tape()
    if tape is None:
        raise ContractError("backward requires an active tape")
    if root.values.shape != ():
        raise ContractError(f"backward root must be scalar, got shape {root.values.shape}")

    needed = {root.node_id}
    touched = {root.node_id: root}
    for rec in reversed(tape.records):
        if rec.output.node_id in needed:
            for t in rec.inputs:
                needed.add(t.node_id)
                touched[t.node_id] = t
    # reset, then allocate lazily on first accumulation; repeated backward
    # calls therefore reproduce identical gradients
    for t in touched.values():
        t.grad = None
    root.grad = np.ones_like(root.values)
    for rec in reversed(tape.records):
        if rec.output.node_id in needed and rec.output.grad is not None:
            rec.rule(rec.output.grad)
