"""Training losses: label-wise moment matching, label classification,
feature diversification, their weighted combination, and the
confidence-thresholded pseudolabel rule for the unlabeled target.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import EnsembleModel
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0     # weight of the summed moment-matching terms
    beta: float = 1.0      # weight of the feature diversifying term
    K: int = 2             # maximum moment order
    tau: float = 0.9       # pseudolabel confidence threshold

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")


@dataclass(frozen=True)
class PseudolabelAssignment:
    labels: np.ndarray        # [B] argmax labels (lowest-index tie rule)
    included: np.ndarray      # [B] bool, confidence strictly above tau
    confidences: np.ndarray   # [B] max softmax probability


def assign_pseudolabels(logits, tau: float) -> PseudolabelAssignment:
    """Label = row argmax; included only when max probability exceeds tau."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    values = logits.values if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    shifted = values - values.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    confidences = probs.max(axis=1)
    labels = np.argmax(values, axis=1)
    return PseudolabelAssignment(labels, confidences > tau, confidences)


def lmm_loss(features_by_domain: list[tuple[Tensor, np.ndarray, np.ndarray]],
             n_classes: int, K: int) -> Tensor:
    """Label-wise moment matching over all unordered domain pairs.

    Each entry is (features [B x d], labels [B], include mask [B]); the
    target comes last with its pseudolabel mask, sources all-true. A
    (pair, class, order) term with no included samples of that class on
    either side is skipped; the leading 1/C and pair-count constants
    stay fixed so the loss scale is batch-independent.
    """
    if len(features_by_domain) < 2:
        raise ValueError("lmm_loss needs at least 2 domains")
    if K < 1:
        raise ValueError("K must be >= 1")
    n_domains = len(features_by_domain)
    masks = []
    for feats, labels, include in features_by_domain:
        labels = np.asarray(labels, dtype=np.int64)
        include = np.asarray(include, dtype=bool)
        masks.append([(labels == c) & include for c in range(n_classes)])

    total: Tensor | None = None
    for k in range(1, K + 1):
        powered = [feats if k == 1 else T.elementwise_pow(feats, k)
                   for feats, _, _ in features_by_domain]
        for a in range(n_domains):
            for b in range(a + 1, n_domains):
                for c in range(n_classes):
                    if not masks[a][c].any() or not masks[b][c].any():
                        continue
                    term = T.l2_norm_diff(
                        T.masked_mean_rows(powered[a], masks[a][c]),
                        T.masked_mean_rows(powered[b], masks[b][c]))
                    total = term if total is None else total + term
    if total is None:
        total = T.zeros_scalar()
    norm = (1.0 / n_classes) / math.comb(n_domains, 2)
    return norm * total


def lc_loss(model: EnsembleModel, k: int,
            source_batches: list[tuple[Tensor, np.ndarray]]) -> Tensor:
    """Mean over source domains of softmax CE through pair k."""
    if not source_batches:
        raise ValueError("lc_loss needs at least one source batch")
    total: Tensor | None = None
    for x, y in source_batches:
        if x.shape[0] == 0:
            raise ValueError("lc_loss: empty batch for a source domain")
        ce = T.softmax_cross_entropy(model.classify_pair(k, model.extract(k, x)), y)
        total = ce if total is None else total + ce
    return (1.0 / len(source_batches)) * total


def fd_loss(model: EnsembleModel, all_batches: list[Tensor]) -> Tensor:
    """Cross-entropy of the extractor classifier recognizing each extractor.

    Per domain batch: sum over extractors k of CE(f_ec(f_e_k(x)), k-1),
    averaged over the batch, then averaged over the N+1 domains.
    """
    if not all_batches:
        raise ValueError("fd_loss needs at least one domain batch")
    n = model.cfg.n_extractors
    total: Tensor | None = None
    for x in all_batches:
        for k in range(1, n + 1):
            logits = model.extractor_classify(model.extract(k, x))
            targets = np.full(x.shape[0], k - 1, dtype=np.int64)
            ce = T.softmax_cross_entropy(logits, targets)
            total = ce if total is None else total + ce
    return (1.0 / len(all_batches)) * total


@dataclass
class LossBreakdown:
    total: float
    lc_per_pair: list[float]
    lmm_per_pair: list[float]
    fd: float
    pl_count: int
    pl_rate: float

    @property
    def lc_sum(self) -> float:
        return float(sum(self.lc_per_pair))

    @property
    def lmm_sum(self) -> float:
        return float(sum(self.lmm_per_pair))


def total_loss(model: EnsembleModel,
               source_batches: list[tuple[Tensor, np.ndarray]],
               target_batch: Tensor,
               weights: LossWeights,
               marginal: bool = False,
               use_fd: bool = True,
               use_lmm: bool = True) -> tuple[Tensor, LossBreakdown]:
    """Combined stage-1 loss: sum_k L_lc_k + alpha * sum_k L_lmm_k + beta * L_fd.

    Each pair derives its own pseudolabels from its own classifier.
    With `marginal` set, class structure is collapsed (one moment mean
    per domain and order, every target sample included, no 1/C factor).
    """
    n = model.cfg.n_extractors
    n_classes = model.cfg.n_classes
    total: Tensor | None = None
    lc_values, lmm_values = [], []
    pl_count, pl_total = 0, 0

    for k in range(1, n + 1):
        lc_k = lc_loss(model, k, source_batches)
        lc_values.append(lc_k.item())
        total = lc_k if total is None else total + lc_k

        if not use_lmm:
            lmm_values.append(0.0)
            continue
        source_feats = [(model.extract(k, x), y, np.ones(x.shape[0], dtype=bool))
                        for x, y in source_batches]
        target_feats = model.extract(k, target_batch)
        if marginal:
            entries = [(f, np.zeros(f.shape[0], dtype=np.int64), m)
                       for f, _, m in source_feats]
            entries.append((target_feats,
                            np.zeros(target_feats.shape[0], dtype=np.int64),
                            np.ones(target_feats.shape[0], dtype=bool)))
            lmm_k = lmm_loss(entries, 1, weights.K)
        else:
            assignment = assign_pseudolabels(
                model.classify_pair(k, target_feats), weights.tau)
            pl_count += int(assignment.included.sum())
            pl_total += assignment.included.size
            entries = [(f, y, m) for f, y, m in source_feats]
            entries.append((target_feats, assignment.labels, assignment.included))
            lmm_k = lmm_loss(entries, n_classes, weights.K)
        lmm_values.append(lmm_k.item())
        if weights.alpha > 0:
            total = total + weights.alpha * lmm_k

    if use_fd and weights.beta > 0:
        fd = fd_loss(model, [x for x, _ in source_batches] + [target_batch])
        fd_value = fd.item()
        total = total + weights.beta * fd
    else:
        fd_value = 0.0

    breakdown = LossBreakdown(
        total=total.item(),
        lc_per_pair=lc_values,
        lmm_per_pair=lmm_values,
        fd=fd_value,
        pl_count=pl_count,
        pl_rate=pl_count / pl_total if pl_total else 0.0,
    )
    return total, breakdown


def final_lc_loss(model: EnsembleModel,
                  source_batches: list[tuple[Tensor, np.ndarray]]) -> Tensor:
    """Stage-2 loss: CE of the final classifier on concatenated features.

    Features are detached constants, so gradients reach only the final
    classifier's parameters.
    """
    if not source_batches:
        raise ValueError("final_lc_loss needs at least one source batch")
    total: Tensor | None = None
    for x, y in source_batches:
        if x.shape[0] == 0:
            raise ValueError("final_lc_loss: empty batch for a source domain")
        feats = np.concatenate(
            [model.extract(k, x).values for k in range(1, model.cfg.n_extractors + 1)],
            axis=1)
        logits = T.add(T.matmul(Tensor(feats), model.params["final_clf/W"]),
                       model.params["final_clf/b"])
        ce = T.softmax_cross_entropy(logits, y)
        total = ce if total is None else total + ce
    return (1.0 / len(source_batches)) * total
