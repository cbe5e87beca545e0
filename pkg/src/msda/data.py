"""Synthetic multi-domain datasets, CSV round-tripping, and batching.

Domains share one feature space and label set. Generation is a pure
function of its spec: the splitmix64 / Box-Muller pipeline in
:mod:`msda.rng` makes repeated calls bit-identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64, derive_seed


class DataFormatError(ValueError):
    """Malformed dataset file; message carries the offending line number."""


@dataclass(frozen=True)
class DomainDataset:
    """Feature matrix with optional labels and a domain identity."""

    features: np.ndarray          # [n_samples x dim], float64
    labels: np.ndarray | None     # [n_samples] ints in [0, n_classes), or None
    domain_name: str
    n_classes: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        object.__setattr__(self, "features", feats)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (feats.shape[0],):
                raise ValueError("label count must equal row count")
            if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
                raise ValueError(f"labels must lie in [0, {self.n_classes})")
            object.__setattr__(self, "labels", labels)
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def without_labels(self) -> "DomainDataset":
        return DomainDataset(self.features, None, self.domain_name, self.n_classes)


@dataclass(frozen=True)
class SyntheticSpec:
    """Fully determines a generated multi-domain dataset."""

    n_domains: int
    n_classes: int
    dim: int
    samples_per_class: int
    class_separation: float
    domain_shift_scale: float
    noise_sigma: float
    seed: int

    def __post_init__(self):
        if self.n_domains < 2:
            raise ValueError("n_domains must be >= 2 (sources plus target)")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.class_separation <= 0:
            raise ValueError("class_separation must be > 0")
        if self.domain_shift_scale < 0:
            raise ValueError("domain_shift_scale must be >= 0")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be > 0")


def gen_gaussian_domains(spec: SyntheticSpec) -> list[DomainDataset]:
    """Gaussian class clusters; each domain applies its own affine shift.

    Per class c a base mean is drawn at class_separation scale. Domain i
    perturbs all class means by a translation and a diagonal scaling
    whose magnitudes are proportional to domain_shift_scale, so a zero
    shift scale leaves every domain with the identical mixture.
    """
    mean_rng = SplitMix64(derive_seed(spec.seed, 1))
    base_means = np.array(
        [[spec.class_separation * mean_rng.normal() for _ in range(spec.dim)]
         for _ in range(spec.n_classes)])

    datasets = []
    for i in range(spec.n_domains):
        shift_rng = SplitMix64(derive_seed(spec.seed, 2, i))
        translation = spec.domain_shift_scale * np.array(shift_rng.normals(spec.dim))
        scaling = 1.0 + spec.domain_shift_scale * np.array(shift_rng.normals(spec.dim))
        domain_means = base_means * scaling[None, :] + translation[None, :]

        sample_rng = SplitMix64(derive_seed(spec.seed, 3, i))
        rows = np.empty((spec.n_classes * spec.samples_per_class, spec.dim))
        labels = np.empty(rows.shape[0], dtype=np.int64)
        r = 0
        for c in range(spec.n_classes):
            for _ in range(spec.samples_per_class):
                noise = np.array(sample_rng.normals(spec.dim))
                rows[r] = domain_means[c] + spec.noise_sigma * noise
                labels[r] = c
                r += 1
        datasets.append(DomainDataset(rows, labels, f"domain{i}", spec.n_classes))
    return datasets


def gen_moons_domains(spec: SyntheticSpec) -> list[DomainDataset]:
    """Two interleaved half-circles; domain i is rotated by i * shift radians."""
    if spec.n_classes != 2:
        raise ValueError("gen_moons_domains requires n_classes = 2")
    if spec.dim != 2:
        raise ValueError("gen_moons_domains requires dim = 2")

    datasets = []
    for i in range(spec.n_domains):
        rng = SplitMix64(derive_seed(spec.seed, 4, i))
        theta = i * spec.domain_shift_scale
        rot = np.array([[math.cos(theta), -math.sin(theta)],
                        [math.sin(theta), math.cos(theta)]])
        rows = np.empty((2 * spec.samples_per_class, 2))
        labels = np.empty(rows.shape[0], dtype=np.int64)
        r = 0
        for c in range(2):
            for _ in range(spec.samples_per_class):
                t = rng.uniform() * math.pi
                if c == 0:
                    point = np.array([math.cos(t), math.sin(t)])
                else:
                    point = np.array([1.0 - math.cos(t), 0.5 - math.sin(t)])
                point = point + spec.noise_sigma * np.array(rng.normals(2))
                rows[r] = rot @ point
                labels[r] = c
                r += 1
        datasets.append(DomainDataset(rows, labels, f"domain{i}", 2))
    return datasets


def save_csv(ds: DomainDataset, path) -> None:
    """Header line, then one comma-separated row per sample (repr floats)."""
    labeled = 1 if ds.labels is not None else 0
    lines = [f"dim={ds.dim},labeled={labeled},classes={ds.n_classes},domain={ds.domain_name}"]
    for j in range(ds.n_samples):
        cells = [repr(float(v)) for v in ds.features[j]]
        if labeled:
            cells.append(str(int(ds.labels[j])))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_csv(path) -> DomainDataset:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DataFormatError("line 1: missing header")
    header: dict[str, str] = {}
    for part in lines[0].split(","):
        if "=" not in part:
            raise DataFormatError(f"line 1: malformed header field {part!r}")
        key, value = part.split("=", 1)
        header[key] = value
    for key in ("dim", "labeled", "classes", "domain"):
        if key not in header:
            raise DataFormatError(f"line 1: header missing {key!r}")
    try:
        dim = int(header["dim"])
        labeled = int(header["labeled"])
        n_classes = int(header["classes"])
    except ValueError as e:
        raise DataFormatError(f"line 1: non-integer header value ({e})") from None
    if labeled not in (0, 1):
        raise DataFormatError("line 1: labeled must be 0 or 1")
    expected_cells = dim + labeled

    features = np.empty((len(lines) - 1, dim))
    labels = np.empty(len(lines) - 1, dtype=np.int64) if labeled else None
    for idx, line in enumerate(lines[1:]):
        lineno = idx + 2
        cells = line.split(",")
        if len(cells) != expected_cells:
            raise DataFormatError(
                f"line {lineno}: expected {expected_cells} cells, got {len(cells)}")
        try:
            features[idx] = [float(c) for c in cells[:dim]]
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-numeric feature cell") from None
        if labeled:
            try:
                label = int(cells[dim])
            except ValueError:
                raise DataFormatError(f"line {lineno}: non-integer label") from None
            if not 0 <= label < n_classes:
                raise DataFormatError(
                    f"line {lineno}: label {label} out of range [0, {n_classes})")
            labels[idx] = label
    return DomainDataset(features, labels, header["domain"], n_classes)


def batcher(ds: DomainDataset, batch_size: int, epoch_seed: int) -> list[np.ndarray]:
    """Seeded Fisher-Yates shuffle partitioned into consecutive batches.

    The final short batch is kept. The exact sequence is a pure function
    of (dataset size, batch_size, epoch_seed).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    indices = list(range(ds.n_samples))
    SplitMix64(epoch_seed).shuffle(indices)
    indices = np.array(indices, dtype=np.int64)
    return [indices[lo:lo + batch_size] for lo in range(0, len(indices), batch_size)]
