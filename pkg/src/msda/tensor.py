"""Dense float64 tensors with reverse-mode differentiation.

A deliberately small engine: it supplies exactly the operation
vocabulary the training losses need (matrix product, bias add, relu,
integer powers, masked row means, L2 distance of vectors, softmax
cross-entropy, column concatenation) plus scalar combination for
weighting loss terms. No broadcasting beyond bias-add over rows.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class LabelError(ValueError):
    """A class label falls outside the valid range."""


class EmptyMaskError(ValueError):
    """A masked reduction selected zero rows."""


class Tensor:
    """Node in the differentiation graph.

    `values` is always a float64 ndarray. `grad` holds the adjoint
    after a backward pass and only on tensors with requires_grad.
    """

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward", "op_tag")

    def __init__(self, values, requires_grad: bool = False,
                 _parents: tuple = (), _backward: Callable | None = None,
                 op_tag: str = "leaf"):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.op_tag = op_tag

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def item(self) -> float:
        return float(self.values.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(op={self.op_tag}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, c) -> "Tensor":
        return scale(self, float(c))

    def __rmul__(self, c) -> "Tensor":
        return scale(self, float(c))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g.copy() if t.grad is None else t.grad + g


def _node(values, parents: tuple[Tensor, ...], backward, tag: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(values, requires_grad=needs,
                  _parents=parents, _backward=backward if needs else None,
                  op_tag=tag)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out_values = a.values @ b.values

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g @ b.values.T)
        _accumulate(b, a.values.T @ g)

    return _node(out_values, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also supports bias-add of a vector over rows."""
    if a.shape == b.shape:
        def backward(g: np.ndarray) -> None:
            _accumulate(a, g)
            _accumulate(b, g)
        return _node(a.values + b.values, (a, b), backward, "add")
    if a.values.ndim == 2 and b.values.ndim == 1 and a.shape[1] == b.shape[0]:
        def backward(g: np.ndarray) -> None:
            _accumulate(a, g)
            _accumulate(b, g.sum(axis=0))
        return _node(a.values + b.values[None, :], (a, b), backward, "bias_add")
    raise ShapeError(f"add: incompatible shapes {a.shape} + {b.shape}")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, c * g)

    return _node(c * x.values, (x,), backward, "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0.0  # derivative at exactly 0 is 0

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * mask)

    return _node(np.where(mask, x.values, 0.0), (x,), backward, "relu")


def elementwise_pow(x: Tensor, k: int) -> Tensor:
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"elementwise_pow: k must be an integer >= 1, got {k!r}")
    k = int(k)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * k * x.values ** (k - 1))

    return _node(x.values ** k, (x,), backward, "pow")


def masked_mean_rows(m: Tensor, mask) -> Tensor:
    """Mean of the rows of a [B x d] tensor selected by a boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    if m.values.ndim != 2 or mask.shape != (m.shape[0],):
        raise ShapeError(f"masked_mean_rows: matrix {m.shape} vs mask {mask.shape}")
    count = int(mask.sum())
    if count == 0:
        raise EmptyMaskError("masked_mean_rows: mask selects no rows")

    def backward(g: np.ndarray) -> None:
        gm = np.zeros_like(m.values)
        gm[mask] = g[None, :] / count
        _accumulate(m, gm)

    return _node(m.values[mask].mean(axis=0), (m,), backward, "masked_mean_rows")


def l2_norm_diff(a: Tensor, b: Tensor) -> Tensor:
    """Euclidean norm of (a - b); gradient is the zero vector at a == b."""
    if a.shape != b.shape:
        raise ShapeError(f"l2_norm_diff: shapes {a.shape} vs {b.shape}")
    diff = a.values - b.values
    norm = float(np.sqrt((diff * diff).sum()))

    def backward(g: np.ndarray) -> None:
        if norm > 0.0:
            d = (g.reshape(()) / norm) * diff
            _accumulate(a, d)
            _accumulate(b, -d)
        else:
            _accumulate(a, np.zeros_like(diff))
            _accumulate(b, np.zeros_like(diff))

    return _node(norm, (a, b), backward, "l2_norm_diff")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], log-sum-exp shifted."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.values.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    batch, n_classes = logits.shape
    if batch < 1:
        raise ShapeError("softmax_cross_entropy: empty batch")
    bad = np.nonzero((labels < 0) | (labels >= n_classes))[0]
    if bad.size:
        raise LabelError(f"softmax_cross_entropy: label {labels[bad[0]]} out of range "
                         f"[0, {n_classes}) at row {bad[0]}")
    shifted = logits.values - logits.values.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = -log_probs[np.arange(batch), labels].mean()
    softmax = np.exp(log_probs)

    def backward(g: np.ndarray) -> None:
        grad = softmax.copy()
        grad[np.arange(batch), labels] -= 1.0
        _accumulate(logits, (g.reshape(()) / batch) * grad)

    return _node(loss, (logits,), backward, "softmax_cross_entropy")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_cols: no parts")
    rows = parts[0].shape[0]
    for p in parts:
        if p.values.ndim != 2 or p.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ "
                             f"({[p.shape for p in parts]})")
    widths = [p.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def backward(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[:, lo:hi])

    return _node(np.concatenate([p.values for p in parts], axis=1),
                 tuple(parts), backward, "concat_cols")


def zeros_scalar() -> Tensor:
    return Tensor(0.0)


def backward(loss: Tensor) -> None:
    """Reverse topological sweep seeding the scalar loss with adjoint 1."""
    if loss.values.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad_check(fn: Callable[[Tensor], Tensor], point: Tensor, step: float = 1e-4) -> float:
    """Max relative error between reverse-mode and central finite differences.

    Error per coordinate is |ad - fd| / max(1, |ad|, |fd|).
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    x = Tensor(point.values.copy(), requires_grad=True)
    loss = fn(x)
    backward(loss)
    analytic = np.zeros_like(x.values) if x.grad is None else x.grad
    flat_point = point.values.reshape(-1)
    worst = 0.0
    for i in range(flat_point.size):
        plus = flat_point.copy()
        plus[i] += step
        minus = flat_point.copy()
        minus[i] -= step
        f_plus = fn(Tensor(plus.reshape(point.shape))).item()
        f_minus = fn(Tensor(minus.reshape(point.shape))).item()
        fd = (f_plus - f_minus) / (2.0 * step)
        ad = analytic.reshape(-1)[i]
        err = abs(ad - fd) / max(1.0, abs(ad), abs(fd))
        worst = max(worst, err)
    return worst
