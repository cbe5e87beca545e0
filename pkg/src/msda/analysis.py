"""Computable bound-related quantities: empirical label-wise moment
divergence (with an independent brute-force oracle), the finite-sample
complexity term of the target-error bound, weighted empirical source
error, and the disagreement ratio between hypotheses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DomainDataset

_ORACLE_TUPLE_LIMIT = 10**6


@dataclass(frozen=True)
class EmpiricalDomain:
    """Point-mass empirical measure: samples, labels, class frequencies."""

    points: np.ndarray        # [n x dim]
    labels: np.ndarray        # [n]
    n_classes: int

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if points.ndim != 2 or labels.shape != (points.shape[0],):
            raise ValueError("points must be [n x dim] with one label per row")
        if labels.size == 0:
            raise ValueError("empirical domain needs at least one sample")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_dataset(cls, ds: DomainDataset) -> "EmpiricalDomain":
        if ds.labels is None:
            raise ValueError("dataset must be labeled")
        return cls(ds.features, ds.labels, ds.n_classes)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def class_probs(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes) / self.labels.size


def exponent_tuples(dim: int, k: int) -> list[tuple[int, ...]]:
    """All nonnegative integer tuples of length dim summing to k,
    in lexicographic order."""
    if dim == 1:
        return [(k,)]
    out = []
    for first in range(k + 1):
        for rest in exponent_tuples(dim - 1, k - first):
            out.append((first, *rest))
    return out


def _num_tuples(dim: int, k: int) -> int:
    return math.comb(dim + k - 1, k)


def lm_divergence(a: EmpiricalDomain, b: EmpiricalDomain, k: int) -> float:
    """L1 distance of class-probability-weighted empirical moment tensors.

    A class absent from one domain contributes the present side's
    absolute term; absent from both contributes zero.
    """
    if a.dim != b.dim or a.n_classes != b.n_classes:
        raise ValueError("domains must share dim and class count")
    if k < 1:
        raise ValueError("k must be >= 1")
    tuples = exponent_tuples(a.dim, k)
    pa, pb = a.class_probs, b.class_probs
    total = 0.0
    for c in range(a.n_classes):
        rows_a = a.points[a.labels == c]
        rows_b = b.points[b.labels == c]
        for exponents in tuples:
            exp = np.array(exponents, dtype=np.float64)
            term_a = pa[c] * (rows_a ** exp).prod(axis=1).mean() if rows_a.size else 0.0
            term_b = pb[c] * (rows_b ** exp).prod(axis=1).mean() if rows_b.size else 0.0
            total += abs(term_a - term_b)
    return float(total)


def lm_divergence_oracle(a: EmpiricalDomain, b: EmpiricalDomain, k: int) -> float:
    """Same quantity by a structurally different path: recursive tuple
    enumeration and naive per-point product accumulation, tuples outer."""
    if a.dim != b.dim or a.n_classes != b.n_classes:
        raise ValueError("domains must share dim and class count")
    if k < 1:
        raise ValueError("k must be >= 1")
    if _num_tuples(a.dim, k) > _ORACLE_TUPLE_LIMIT:
        raise ValueError("exponent tuple enumeration exceeds the oracle guard")

    def moment(domain: EmpiricalDomain, c: int, exponents: tuple[int, ...]) -> float:
        acc, count = 0.0, 0
        for point, label in zip(domain.points, domain.labels):
            if label != c:
                continue
            product = 1.0
            for coord, e in zip(point, exponents):
                for _ in range(e):
                    product *= coord
            acc += product
            count += 1
        if count == 0:
            return 0.0
        prob = count / domain.labels.size
        return prob * acc / count

    total = 0.0
    for exponents in exponent_tuples(a.dim, k):
        for c in range(a.n_classes):
            total += abs(moment(a, c, exponents) - moment(b, c, exponents))
    return total


@dataclass(frozen=True)
class BoundInputs:
    """Inputs of the finite-sample penalty: source weights, per-source
    sample counts, hypothesis-class VC dimension, and confidence delta."""

    alpha: tuple[float, ...]
    n_samples: tuple[int, ...]
    vc_dim: int
    delta: float

    def __post_init__(self):
        alpha = tuple(float(v) for v in self.alpha)
        n_samples = tuple(int(v) for v in self.n_samples)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "n_samples", n_samples)
        if len(alpha) != len(n_samples) or not alpha:
            raise ValueError("alpha and n_samples must be equal-length and nonempty")
        if any(v < 0 for v in alpha) or abs(sum(alpha) - 1.0) > 1e-9:
            raise ValueError("alpha must be nonnegative and sum to 1")
        if any(v <= 0 for v in n_samples):
            raise ValueError("sample counts must be positive")
        if self.vc_dim < 1:
            raise ValueError("vc_dim must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def m(self) -> int:
        return sum(self.n_samples)

    @property
    def beta(self) -> tuple[float, ...]:
        m = self.m
        return tuple(n / m for n in self.n_samples)


def eta_term(b: BoundInputs) -> float:
    """4 * sqrt( (sum alpha_i^2 / beta_i) * (2d(log(2m/d)+1) + 2log(4/delta)) / m )."""
    m, d = b.m, b.vc_dim
    if 2 * m <= d:
        raise ValueError("eta_term requires 2m > d")
    weight = sum(a * a / beta for a, beta in zip(b.alpha, b.beta))
    complexity = 2 * d * (math.log(2 * m / d) + 1) + 2 * math.log(4 / b.delta)
    return 4.0 * math.sqrt(weight * complexity / m)


def weighted_empirical_error(predictions: list[np.ndarray],
                             labels: list[np.ndarray],
                             alpha) -> float:
    """Alpha-weighted mean of per-source misclassification rates."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if len(predictions) != len(labels) or len(predictions) != alpha.size:
        raise ValueError("predictions, labels, and alpha must align")
    if (alpha < 0).any() or abs(alpha.sum() - 1.0) > 1e-9:
        raise ValueError("alpha must be nonnegative and sum to 1")
    total = 0.0
    for a, preds, y in zip(alpha, predictions, labels):
        preds = np.asarray(preds)
        y = np.asarray(y)
        if preds.shape != y.shape:
            raise ValueError("prediction / label length mismatch")
        total += a * float((preds != y).mean())
    return total


def disagreement_ratio(h1_preds, h2_preds) -> float:
    """Empirical probability that the two hypotheses predict differently."""
    h1 = np.asarray(h1_preds)
    h2 = np.asarray(h2_preds)
    if h1.shape != h2.shape:
        raise ValueError("prediction vectors must have equal length")
    if h1.size == 0:
        raise ValueError("disagreement_ratio needs at least one prediction")
    return float((h1 != h2).mean())
