"""Ensemble architecture: n (feature extractor, label classifier) pairs,
one extractor classifier, and one final label classifier over the
concatenated features.

Extractors are MLPs with relu hidden layers and a linear feature
output; every classifier is a single linear layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import SplitMix64, derive_seed
from .tensor import Tensor


class CheckpointFormatError(ValueError):
    """Malformed checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    n_extractors: int
    input_dim: int
    hidden_dims: tuple[int, ...]
    feature_dim: int
    n_classes: int
    init_seed: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if self.n_extractors < 1:
            raise ValueError("n_extractors must be >= 1")
        for name in ("input_dim", "feature_dim", "n_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if any(d < 1 for d in self.hidden_dims):
            raise ValueError("hidden dims must be >= 1")


def _extractor_layer_dims(cfg: ModelConfig) -> list[tuple[int, int]]:
    widths = [cfg.input_dim, *cfg.hidden_dims, cfg.feature_dim]
    return list(zip(widths[:-1], widths[1:]))


def param_count(cfg: ModelConfig) -> int:
    """Exact number of scalar parameters as a function of the config."""
    per_extractor = sum(fi * fo + fo for fi, fo in _extractor_layer_dims(cfg))
    pair_clf = cfg.feature_dim * cfg.n_classes + cfg.n_classes
    extractor_clf = cfg.feature_dim * cfg.n_extractors + cfg.n_extractors
    final_clf = (cfg.n_extractors * cfg.feature_dim) * cfg.n_classes + cfg.n_classes
    return cfg.n_extractors * (per_extractor + pair_clf) + extractor_clf + final_clf


class EnsembleModel:
    """Parameter container plus the forward passes the losses compose."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params
        self.param_names = list(params)

    def parameters(self, names: list[str] | None = None) -> list[Tensor]:
        if names is None:
            names = self.param_names
        return [self.params[n] for n in names]

    def stage1_param_names(self, include_extractor_classifier: bool = True) -> list[str]:
        names = [n for n in self.param_names if not n.startswith("final_clf/")]
        if not include_extractor_classifier:
            names = [n for n in names if not n.startswith("extractor_clf/")]
        return names

    def final_param_names(self) -> list[str]:
        return [n for n in self.param_names if n.startswith("final_clf/")]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def _check_pair_index(self, k: int) -> None:
        if not 1 <= k <= self.cfg.n_extractors:
            raise IndexError(
                f"extractor index {k} out of range [1, {self.cfg.n_extractors}]")

    def extract(self, k: int, x: Tensor) -> Tensor:
        """Features of extractor k (1-based) for a [B x input_dim] batch."""
        self._check_pair_index(k)
        n_layers = len(_extractor_layer_dims(self.cfg))
        out = x
        for layer in range(n_layers):
            w = self.params[f"extractor{k}/W{layer}"]
            b = self.params[f"extractor{k}/b{layer}"]
            out = T.add(T.matmul(out, w), b)
            if layer < n_layers - 1:
                out = T.relu(out)
        return out

    def _linear(self, prefix: str, feat: Tensor) -> Tensor:
        return T.add(T.matmul(feat, self.params[f"{prefix}/W"]),
                     self.params[f"{prefix}/b"])

    def classify_pair(self, k: int, feat: Tensor) -> Tensor:
        self._check_pair_index(k)
        return self._linear(f"pair_clf{k}", feat)

    def extractor_classify(self, feat: Tensor) -> Tensor:
        return self._linear("extractor_clf", feat)

    def final_classify(self, x: Tensor) -> Tensor:
        feats = [self.extract(k, x) for k in range(1, self.cfg.n_extractors + 1)]
        return self._linear("final_clf", T.concat_cols(feats))

    def predict(self, x: Tensor) -> np.ndarray:
        """Argmax labels; ties break toward the lowest class index."""
        return np.argmax(self.final_classify(x).values, axis=1)


def init_model(cfg: ModelConfig) -> EnsembleModel:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases, seeded."""
    rng = SplitMix64(derive_seed(cfg.init_seed, 7))
    params: dict[str, Tensor] = {}

    def linear(name: str, fan_in: int, fan_out: int) -> None:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = np.array([[bound * (2.0 * rng.uniform() - 1.0) for _ in range(fan_out)]
                      for _ in range(fan_in)])
        params[f"{name}/W"] = Tensor(w, requires_grad=True)
        params[f"{name}/b"] = Tensor(np.zeros(fan_out), requires_grad=True)

    layer_dims = _extractor_layer_dims(cfg)
    for k in range(1, cfg.n_extractors + 1):
        for layer, (fi, fo) in enumerate(layer_dims):
            bound = np.sqrt(6.0 / (fi + fo))
            w = np.array([[bound * (2.0 * rng.uniform() - 1.0) for _ in range(fo)]
                          for _ in range(fi)])
            params[f"extractor{k}/W{layer}"] = Tensor(w, requires_grad=True)
            params[f"extractor{k}/b{layer}"] = Tensor(np.zeros(fo), requires_grad=True)
        linear(f"pair_clf{k}", cfg.feature_dim, cfg.n_classes)
    linear("extractor_clf", cfg.feature_dim, cfg.n_extractors)
    linear("final_clf", cfg.n_extractors * cfg.feature_dim, cfg.n_classes)
    return EnsembleModel(cfg, params)


def save_checkpoint(model: EnsembleModel, path) -> None:
    cfg = model.cfg
    hidden = "-".join(str(d) for d in cfg.hidden_dims) or "none"
    lines = [f"n={cfg.n_extractors},input_dim={cfg.input_dim},hidden_dims={hidden},"
             f"feature_dim={cfg.feature_dim},classes={cfg.n_classes}"]
    for name in model.param_names:
        values = model.params[name].values
        shape = "x".join(str(s) for s in values.shape)
        cells = " ".join(repr(float(v)) for v in values.reshape(-1))
        lines.append(f"{name} {shape} {cells}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> EnsembleModel:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise CheckpointFormatError("empty checkpoint file")
    header = dict(part.split("=", 1) for part in lines[0].split(",") if "=" in part)
    try:
        hidden_raw = header["hidden_dims"]
        hidden = () if hidden_raw == "none" else tuple(int(d) for d in hidden_raw.split("-"))
        cfg = ModelConfig(
            n_extractors=int(header["n"]),
            input_dim=int(header["input_dim"]),
            hidden_dims=hidden,
            feature_dim=int(header["feature_dim"]),
            n_classes=int(header["classes"]),
            init_seed=0,
        )
    except (KeyError, ValueError) as e:
        raise CheckpointFormatError(f"bad checkpoint header: {e}") from None
    model = init_model(cfg)
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(" ")
        if len(parts) < 3:
            raise CheckpointFormatError(f"line {lineno}: malformed parameter line")
        name, shape_str = parts[0], parts[1]
        if name not in model.params:
            raise CheckpointFormatError(f"line {lineno}: unknown parameter {name!r}")
        shape = tuple(int(s) for s in shape_str.split("x"))
        values = np.array([float(v) for v in parts[2:]])
        if values.size != int(np.prod(shape)) or shape != model.params[name].values.shape:
            raise CheckpointFormatError(f"line {lineno}: shape mismatch for {name!r}")
        model.params[name] = Tensor(values.reshape(shape), requires_grad=True)
    seen = set(lines[i].split(" ", 1)[0] for i in range(1, len(lines)))
    missing = [n for n in model.param_names if n not in seen]
    if missing:
        raise CheckpointFormatError(f"checkpoint missing parameters: {missing[:3]}")
    return model
