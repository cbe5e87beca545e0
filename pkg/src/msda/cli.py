"""Command-line surface: dataset generation, training, evaluation,
ablation sweeps, and divergence analysis, all driven by a line-oriented
``key = value`` config file with ``#`` comments.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import EmpiricalDomain, lm_divergence
from .data import (DomainDataset, SyntheticSpec, gen_gaussian_domains,
                   gen_moons_domains, load_csv, save_csv)
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .objective import LossWeights
from .trainer import (VARIANTS, EpochRow, OptimizerConfig, TrainConfig,
                      adapt_for_variant, evaluate, run_variant)
from .tensor import Tensor

METRICS_COLUMNS = ("epoch", "stage", "variant", "loss_total", "loss_lc",
                   "loss_lmm", "loss_fd", "pl_count", "pl_rate",
                   "target_acc", "seconds")


class ConfigError(ValueError):
    """Invalid experiment config; message names the key and line."""


def _parse_int(s): return int(s)
def _parse_float(s): return float(s)
def _parse_str(s): return s
def _parse_int_list(s): return tuple(int(v) for v in s.split(",") if v.strip())
def _parse_str_list(s): return tuple(v.strip() for v in s.split(",") if v.strip())


# key -> (parser, default); None default means "must be provided" is not
# used here: every key has a usable default except the file paths.
_SCHEMA = {
    "generator": (_parse_str, "gaussian"),
    "n_domains": (_parse_int, 4),
    "n_classes": (_parse_int, 4),
    "dim": (_parse_int, 8),
    "samples_per_class": (_parse_int, 500),
    "class_separation": (_parse_float, 3.0),
    "domain_shift_scale": (_parse_float, 0.6),
    "noise_sigma": (_parse_float, 1.0),
    "data_seed": (_parse_int, 1),
    "source_files": (_parse_str_list, ()),
    "target_file": (_parse_str, ""),
    "output_dir": (_parse_str, "out"),
    "n_extractors": (_parse_int, 2),
    "hidden_dims": (_parse_int_list, (32,)),
    "feature_dim": (_parse_int, 16),
    "alpha": (_parse_float, 0.1),
    "beta": (_parse_float, 1.0),
    "K": (_parse_int, 2),
    "tau": (_parse_float, 0.9),
    "variant": (_parse_str, "ENMDAP"),
    "variants": (_parse_str_list, ("MDAP_L", "MDAP", "ENMDAP_R", "ENMDAP")),
    "optimizer": (_parse_str, "adam"),
    "lr": (_parse_float, 0.0004),
    "adam_beta1": (_parse_float, 0.9),
    "adam_beta2": (_parse_float, 0.999),
    "adam_eps": (_parse_float, 1e-8),
    "epochs_stage1": (_parse_int, 30),
    "epochs_stage2": (_parse_int, 20),
    "batch_size": (_parse_int, 128),
    "seed": (_parse_int, 0),
}


@dataclass(frozen=True)
class RunConfig:
    synthetic: SyntheticSpec
    generator: str
    hidden_dims: tuple[int, ...]
    feature_dim: int
    train: TrainConfig
    variants: tuple[str, ...]
    source_files: tuple[str, ...]
    target_file: str
    output_dir: str


def parse_config(path) -> RunConfig:
    """Parse and fully validate a key = value config file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    raw: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser, _ = _SCHEMA[key]
        try:
            raw[key] = parser(value)
        except ValueError:
            raise ConfigError(
                f"line {lineno}: bad value {value!r} for key {key!r}") from None
    values = {key: raw.get(key, default) for key, (_, default) in _SCHEMA.items()}

    try:
        synthetic = SyntheticSpec(
            n_domains=values["n_domains"], n_classes=values["n_classes"],
            dim=values["dim"], samples_per_class=values["samples_per_class"],
            class_separation=values["class_separation"],
            domain_shift_scale=values["domain_shift_scale"],
            noise_sigma=values["noise_sigma"], seed=values["data_seed"])
        weights = LossWeights(alpha=values["alpha"], beta=values["beta"],
                              K=values["K"], tau=values["tau"])
        optimizer = OptimizerConfig(kind=values["optimizer"], lr=values["lr"],
                                    beta1=values["adam_beta1"],
                                    beta2=values["adam_beta2"],
                                    eps=values["adam_eps"])
        train = TrainConfig(variant=values["variant"],
                            n_extractors=values["n_extractors"],
                            weights=weights, optimizer=optimizer,
                            epochs_stage1=values["epochs_stage1"],
                            epochs_stage2=values["epochs_stage2"],
                            batch_size=values["batch_size"],
                            seed=values["seed"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if values["generator"] not in ("gaussian", "moons"):
        raise ConfigError(f"unknown generator {values['generator']!r}")
    for variant in values["variants"]:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r} in variants list")
    return RunConfig(
        synthetic=synthetic, generator=values["generator"],
        hidden_dims=values["hidden_dims"], feature_dim=values["feature_dim"],
        train=train, variants=values["variants"],
        source_files=values["source_files"], target_file=values["target_file"],
        output_dir=values["output_dir"])


def _generate(config: RunConfig) -> list[DomainDataset]:
    gen = gen_gaussian_domains if config.generator == "gaussian" else gen_moons_domains
    return gen(config.synthetic)


def _load_datasets(config: RunConfig) -> list[DomainDataset]:
    """Datasets from the configured files, or synthesized when absent.

    The last dataset is the target.
    """
    if config.source_files and config.target_file:
        datasets = [load_csv(p) for p in config.source_files]
        datasets.append(load_csv(config.target_file))
        dims = {d.dim for d in datasets}
        if len(dims) != 1:
            raise ConfigError(f"domains disagree on feature dim: {sorted(dims)}")
        return datasets
    if config.source_files or config.target_file:
        raise ConfigError("source_files and target_file must be given together")
    return _generate(config)


def _model_config(config: RunConfig, input_dim: int, n_classes: int) -> ModelConfig:
    return ModelConfig(
        n_extractors=config.train.n_extractors, input_dim=input_dim,
        hidden_dims=config.hidden_dims, feature_dim=config.feature_dim,
        n_classes=n_classes, init_seed=0)


def _write_metrics(rows: list[EpochRow], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_COLUMNS)
        for r in rows:
            writer.writerow([r.epoch, r.stage, r.variant,
                             repr(r.loss_total), repr(r.loss_lc),
                             repr(r.loss_lmm), repr(r.loss_fd),
                             repr(r.pl_count), repr(r.pl_rate),
                             repr(r.target_acc), repr(r.seconds)])


def cmd_gen(args) -> int:
    config = parse_config(args.config)
    datasets = _generate(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ds in datasets:
        save_csv(ds, out / f"{ds.domain_name}.csv")
        print(f"wrote {out / (ds.domain_name + '.csv')} "
              f"({ds.n_samples} rows, dim {ds.dim})")
    return 0


def cmd_train(args) -> int:
    config = parse_config(args.config)
    train_cfg = config.train
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    datasets = _load_datasets(config)
    model_cfg = _model_config(config, datasets[0].dim, datasets[0].n_classes)
    model, rows, accuracy = run_variant(datasets, model_cfg, train_cfg)

    out = Path(args.out if args.out else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_metrics(rows, out / "metrics.csv")
    save_checkpoint(model, out / "checkpoint.txt")
    stage1_rows = [r for r in rows if r.stage == 1]
    summary = {
        "variant": train_cfg.variant,
        "seed": train_cfg.seed,
        "target_accuracy": accuracy,
        "pl_rate_final": stage1_rows[-1].pl_rate if stage1_rows else 0.0,
    }
    with open(out / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    print(f"variant={train_cfg.variant} seed={train_cfg.seed} "
          f"target_accuracy={accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = load_csv(args.data)
    accuracy = evaluate(model, ds)
    print(f"accuracy={accuracy:.6f}")
    return 0


def cmd_ablate(args) -> int:
    config = parse_config(args.config)
    datasets = _load_datasets(config)
    base_seed = config.train.seed
    seeds = [base_seed + i for i in range(args.seeds)]
    table = []
    for variant in config.variants:
        cfg_v = adapt_for_variant(config.train, variant)
        model_cfg = _model_config(config, datasets[0].dim, datasets[0].n_classes)
        model_cfg = dataclasses.replace(model_cfg, n_extractors=cfg_v.n_extractors)
        accs = []
        for seed in seeds:
            cfg_s = dataclasses.replace(cfg_v, seed=seed)
            _, _, accuracy = run_variant(datasets, model_cfg, cfg_s)
            accs.append(accuracy)
            print(f"{variant} seed={seed} acc={accuracy:.4f}")
        accs = np.array(accs)
        std = float(accs.std(ddof=1)) if len(accs) > 1 else 0.0
        table.append((variant, cfg_v.n_extractors, float(accs.mean()), std))
    out = Path(args.out if args.out else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "n", "mean_acc", "std_acc", "seeds"])
        for variant, n, mean_acc, std_acc in table:
            writer.writerow([variant, n, repr(mean_acc), repr(std_acc),
                             ";".join(str(s) for s in seeds)])
    print(f"wrote {out / 'ablation.csv'}")
    return 0


def cmd_divergence(args) -> int:
    ds_a = load_csv(args.a)
    ds_b = load_csv(args.b)
    dom_a = EmpiricalDomain.from_dataset(ds_a)
    dom_b = EmpiricalDomain.from_dataset(ds_b)
    print("k,d_lm")
    for k in range(1, args.k_max + 1):
        print(f"{k},{lm_divergence(dom_a, dom_b, k)!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msda",
        description="Multi-source domain adaptation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic domain CSVs")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="run both training stages")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the variant comparison table")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("divergence", help="label-wise moment divergence of two files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--k-max", dest="k_max", type=int, required=True)
    p.set_defaults(func=cmd_divergence)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
