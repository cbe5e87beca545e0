"""Two-stage training: the whole ensemble minus the final classifier
first, then the final classifier alone on frozen features. Also the
ablation variants and target-accuracy evaluation.
"""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import DomainDataset, batcher
from .model import EnsembleModel, ModelConfig, init_model
from .objective import LossWeights, final_lc_loss, total_loss
from .rng import derive_seed
from .tensor import Tensor

VARIANTS = ("ENMDAP", "ENMDAP_R", "MDAP", "MDAP_L", "SOURCE_COMBINED")

# variants without an ensemble: single pair, no extractor classifier
_SINGLE_PAIR_VARIANTS = ("MDAP", "MDAP_L", "SOURCE_COMBINED")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"          # "adam" or "sgd"
    lr: float = 0.0004
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "ENMDAP"
    n_extractors: int = 2
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs_stage1: int = 30
    epochs_stage2: int = 20
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; one of {VARIANTS}")
        if self.variant in _SINGLE_PAIR_VARIANTS and self.n_extractors != 1:
            raise ValueError(f"variant {self.variant} forces n_extractors = 1")
        if self.variant == "ENMDAP_R" and self.weights.beta != 0:
            raise ValueError("variant ENMDAP_R forces beta = 0")
        if self.n_extractors < 1:
            raise ValueError("n_extractors must be >= 1")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def adapt_for_variant(cfg: TrainConfig, variant: str) -> TrainConfig:
    """Clone a config with the fields the variant mandates."""
    n = 1 if variant in _SINGLE_PAIR_VARIANTS else cfg.n_extractors
    weights = cfg.weights
    if variant == "ENMDAP_R":
        weights = dataclasses.replace(weights, beta=0.0)
    return dataclasses.replace(cfg, variant=variant, n_extractors=n, weights=weights)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "AdamState":
        return cls(m=[np.zeros_like(p.values) for p in params],
                   v=[np.zeros_like(p.values) for p in params])


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    if lr <= 0:
        raise ValueError("lr must be > 0")
    state.t += 1
    t = state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.values.shape:
            raise T.ShapeError(f"adam_step: gradient shape {g.shape} vs "
                               f"parameter shape {p.values.shape}")
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * g * g
        m_hat = state.m[i] / (1 - beta1 ** t)
        v_hat = state.v[i] / (1 - beta2 ** t)
        p.values = p.values - lr * m_hat / (np.sqrt(v_hat) + eps)


def sgd_step(params: list[Tensor], grads: list[np.ndarray], lr: float) -> None:
    if lr <= 0:
        raise ValueError("lr must be > 0")
    for p, g in zip(params, grads):
        if g.shape != p.values.shape:
            raise T.ShapeError(f"sgd_step: gradient shape {g.shape} vs "
                               f"parameter shape {p.values.shape}")
        p.values = p.values - lr * g


def _optimizer_step(params: list[Tensor], opt: OptimizerConfig,
                    state: AdamState | None) -> None:
    grads = [p.grad if p.grad is not None else np.zeros_like(p.values)
             for p in params]
    if opt.kind == "adam":
        adam_step(params, grads, state, opt.lr, opt.beta1, opt.beta2, opt.eps)
    else:
        sgd_step(params, grads, opt.lr)


@dataclass
class EpochRow:
    epoch: int
    stage: int
    variant: str
    loss_total: float
    loss_lc: float      # mean per pair, mean over steps
    loss_lmm: float     # mean per pair (unweighted), mean over steps
    loss_fd: float
    pl_count: float     # included target samples, mean per step
    pl_rate: float
    target_acc: float
    seconds: float


class _BatchStream:
    """Per-domain batch supply that re-shuffles and wraps when drained."""

    def __init__(self, ds: DomainDataset, batch_size: int, seed: int):
        self.ds = ds
        self.batch_size = batch_size
        self.seed = seed
        self.wrap = 0
        self.pending = batcher(ds, batch_size, derive_seed(seed, self.wrap))

    def next(self) -> np.ndarray:
        if not self.pending:
            self.wrap += 1
            self.pending = batcher(self.ds, self.batch_size,
                                   derive_seed(self.seed, self.wrap))
        return self.pending.pop(0)


def _variant_flags(cfg: TrainConfig) -> dict:
    variant = cfg.variant
    return {
        "marginal": variant == "MDAP_L",
        "use_lmm": variant != "SOURCE_COMBINED",
        "use_fd": variant == "ENMDAP" and cfg.n_extractors > 1
                  and cfg.weights.beta > 0,
    }


def _effective_weights(cfg: TrainConfig) -> LossWeights:
    if cfg.variant == "SOURCE_COMBINED":
        return dataclasses.replace(cfg.weights, alpha=0.0, beta=0.0)
    return cfg.weights


def evaluate(model: EnsembleModel, labeled_target: DomainDataset) -> float:
    """Fraction of target samples whose prediction matches the label."""
    if labeled_target.labels is None:
        raise ValueError("evaluate needs a labeled dataset")
    if labeled_target.n_samples == 0:
        raise ValueError("evaluate: empty dataset")
    predictions = model.predict(Tensor(labeled_target.features))
    return float((predictions == labeled_target.labels).mean())


def _check_finite(loss_value: float, stage: int, epoch: int, step: int,
                  breakdown) -> None:
    if math.isfinite(loss_value):
        return
    raise RuntimeError(
        f"non-finite loss at stage {stage}, epoch {epoch}, step {step}: "
        f"{breakdown}")


def train_stage1(model: EnsembleModel, sources: list[DomainDataset],
                 target: DomainDataset, cfg: TrainConfig,
                 eval_target: DomainDataset | None = None) -> list[EpochRow]:
    """Train extractors, pair classifiers, and (when used) the extractor
    classifier against the combined loss; one shared optimizer state."""
    if not sources or any(s.n_samples == 0 for s in sources) or target.n_samples == 0:
        raise ValueError("train_stage1: every domain needs at least one sample")
    for s in sources:
        if s.labels is None:
            raise ValueError(f"source domain {s.domain_name!r} must be labeled")
    flags = _variant_flags(cfg)
    weights = _effective_weights(cfg)
    param_names = model.stage1_param_names(include_extractor_classifier=flags["use_fd"])
    params = model.parameters(param_names)
    state = AdamState.for_params(params) if cfg.optimizer.kind == "adam" else None

    domains = [*sources, target]
    steps_per_epoch = max(math.ceil(d.n_samples / cfg.batch_size) for d in domains)
    rows = []
    for epoch in range(cfg.epochs_stage1):
        start = time.perf_counter()
        streams = [_BatchStream(d, cfg.batch_size, derive_seed(cfg.seed, 1, epoch, di))
                   for di, d in enumerate(domains)]
        sums = {"total": 0.0, "lc": 0.0, "lmm": 0.0, "fd": 0.0,
                "pl_count": 0.0, "pl_rate": 0.0}
        for step in range(steps_per_epoch):
            source_batches = []
            for s, stream in zip(sources, streams[:-1]):
                idx = stream.next()
                source_batches.append((Tensor(s.features[idx]), s.labels[idx]))
            target_x = Tensor(target.features[streams[-1].next()])

            model.zero_grad()
            loss, bd = total_loss(model, source_batches, target_x, weights, **flags)
            _check_finite(bd.total, 1, epoch, step, bd)
            T.backward(loss)
            _optimizer_step(params, cfg.optimizer, state)

            n = cfg.n_extractors
            sums["total"] += bd.total
            sums["lc"] += bd.lc_sum / n
            sums["lmm"] += bd.lmm_sum / n
            sums["fd"] += bd.fd
            sums["pl_count"] += bd.pl_count
            sums["pl_rate"] += bd.pl_rate
        acc = evaluate(model, eval_target) if eval_target is not None else float("nan")
        rows.append(EpochRow(
            epoch=epoch, stage=1, variant=cfg.variant,
            loss_total=sums["total"] / steps_per_epoch,
            loss_lc=sums["lc"] / steps_per_epoch,
            loss_lmm=sums["lmm"] / steps_per_epoch,
            loss_fd=sums["fd"] / steps_per_epoch,
            pl_count=sums["pl_count"] / steps_per_epoch,
            pl_rate=sums["pl_rate"] / steps_per_epoch,
            target_acc=acc,
            seconds=time.perf_counter() - start,
        ))
    return rows


def train_stage2(model: EnsembleModel, sources: list[DomainDataset],
                 cfg: TrainConfig,
                 eval_target: DomainDataset | None = None) -> list[EpochRow]:
    """Train only the final classifier; every other parameter is frozen."""
    if not sources or any(s.n_samples == 0 for s in sources):
        raise ValueError("train_stage2: every source needs at least one sample")
    params = model.parameters(model.final_param_names())
    state = AdamState.for_params(params) if cfg.optimizer.kind == "adam" else None
    steps_per_epoch = max(math.ceil(s.n_samples / cfg.batch_size) for s in sources)
    rows = []
    for epoch in range(cfg.epochs_stage2):
        start = time.perf_counter()
        streams = [_BatchStream(s, cfg.batch_size, derive_seed(cfg.seed, 2, epoch, di))
                   for di, s in enumerate(sources)]
        loss_sum = 0.0
        for step in range(steps_per_epoch):
            source_batches = []
            for s, stream in zip(sources, streams):
                idx = stream.next()
                source_batches.append((Tensor(s.features[idx]), s.labels[idx]))
            model.zero_grad()
            loss = final_lc_loss(model, source_batches)
            value = loss.item()
            _check_finite(value, 2, epoch, step, f"final_lc_loss={value}")
            T.backward(loss)
            _optimizer_step(params, cfg.optimizer, state)
            loss_sum += value
        acc = evaluate(model, eval_target) if eval_target is not None else float("nan")
        rows.append(EpochRow(
            epoch=epoch, stage=2, variant=cfg.variant,
            loss_total=loss_sum / steps_per_epoch,
            loss_lc=loss_sum / steps_per_epoch,
            loss_lmm=0.0, loss_fd=0.0, pl_count=0.0, pl_rate=0.0,
            target_acc=acc,
            seconds=time.perf_counter() - start,
        ))
    return rows


def run_variant(datasets: list[DomainDataset], model_cfg: ModelConfig,
                cfg: TrainConfig) -> tuple[EnsembleModel, list[EpochRow], float]:
    """Full pipeline: init, stage 1, stage 2, final target accuracy.

    `datasets` is N labeled sources followed by the target; target labels
    are stripped for training and used only for evaluation. The model's
    init seed is derived from the training seed so one seed drives the
    entire run.
    """
    if len(datasets) < 2:
        raise ValueError("need at least one source and one target dataset")
    sources = datasets[:-1]
    eval_target = datasets[-1]
    target = eval_target.without_labels()
    model_cfg = dataclasses.replace(
        model_cfg, n_extractors=cfg.n_extractors,
        init_seed=derive_seed(cfg.seed, 11))
    model = init_model(model_cfg)
    has_eval = eval_target.labels is not None
    rows = train_stage1(model, sources, target, cfg,
                        eval_target if has_eval else None)
    rows += train_stage2(model, sources, cfg,
                         eval_target if has_eval else None)
    accuracy = evaluate(model, eval_target) if has_eval else float("nan")
    return model, rows, accuracy
