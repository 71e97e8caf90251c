"""Synthetic long-tailed multimodal regression data.

Targets are concentrated near the top of ``target_range`` with a thin tail
toward the bottom, like visual-field MD values.  Each modality observes the
target through its own fixed random projection and nonlinearity, so the two
views carry different amounts of usable signal.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

GROUPS = ("Many", "Middle", "Few")
LEVELS = (1, -6, -12, -18)
# lower edges of the severity bands that map onto LEVELS
LEVEL_EDGES = (0.0, -6.0, -12.0)


@dataclass
class LongTailSpec:
    n_samples: int = 2000
    target_range: Tuple[float, float] = (-18.0, 1.0)
    tail_exponent: float = 5.0
    modality_dims: Tuple[int, ...] = (16, 8)
    noise_scales: Tuple[float, ...] = (0.3, 0.3)
    seed: int = 42

    def validate(self) -> None:
        lo, hi = self.target_range
        if not lo < hi:
            raise ValueError(f"target_range must satisfy lo < hi, got {self.target_range}")
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")
        if self.tail_exponent <= 0:
            raise ValueError("tail_exponent must be > 0")
        if len(self.modality_dims) < 2:
            raise ValueError("need at least two modalities")
        if any(d < 1 for d in self.modality_dims):
            raise ValueError(f"modality dims must be >= 1, got {self.modality_dims}")
        if len(self.noise_scales) != len(self.modality_dims):
            raise ValueError("noise_scales must have one entry per modality")
        if any(s < 0 for s in self.noise_scales):
            raise ValueError("noise scales must be >= 0")


@dataclass
class GroupThresholds:
    bin_width: float = 1.0
    many_min: int = 100
    few_max: int = 20

    def validate(self) -> None:
        if self.bin_width <= 0:
            raise ValueError("bin_width must be > 0")
        if not self.few_max < self.many_min:
            raise ValueError("few_max must be < many_min")


@dataclass
class MultimodalSample:
    features: List[np.ndarray]
    target: float
    group: str


@dataclass
class Dataset:
    """Column-oriented store: ``features[k]`` has shape (n, d_k)."""

    features: List[np.ndarray]
    targets: np.ndarray
    groups: np.ndarray = field(default=None)

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.features = [np.asarray(f, dtype=np.float64).reshape(len(self.targets), -1) for f in self.features]
        if self.groups is None:
            self.groups = np.array(["Many"] * len(self.targets), dtype=object)
        self.groups = np.asarray(self.groups, dtype=object)

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def modality_dims(self) -> Tuple[int, ...]:
        return tuple(f.shape[1] for f in self.features)

    @property
    def levels(self) -> np.ndarray:
        return severity_levels(self.targets)

    @property
    def normalized_targets(self) -> np.ndarray:
        return normalize_targets(self.targets)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset([f[idx] for f in self.features], self.targets[idx], self.groups[idx])

    def samples(self) -> Iterator[MultimodalSample]:
        for i in range(len(self)):
            yield MultimodalSample([f[i] for f in self.features], float(self.targets[i]), str(self.groups[i]))

    def equals(self, other: "Dataset") -> bool:
        return (
            np.array_equal(self.targets, other.targets)
            and list(self.groups) == list(other.groups)
            and len(self.features) == len(other.features)
            and all(np.array_equal(a, b) for a, b in zip(self.features, other.features))
        )


def severity_levels(targets) -> np.ndarray:
    """Level code per target: 1 for y >= 0, then -6 / -12 / -18 bands."""
    y = np.asarray(targets, dtype=np.float64)
    out = np.full(y.shape, LEVELS[-1], dtype=np.int64)
    for edge, level in zip(LEVEL_EDGES[::-1], LEVELS[-2::-1]):
        out[y >= edge] = level
    return out


def normalize_targets(targets) -> np.ndarray:
    """Map targets into [0, 1] by dividing by their level code."""
    y = np.asarray(targets, dtype=np.float64)
    return y / severity_levels(y)


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *stream])


def sample_targets(spec: LongTailSpec) -> np.ndarray:
    spec.validate()
    lo, hi = spec.target_range
    b = _rng(spec.seed, 0).beta(1.0, spec.tail_exponent, size=spec.n_samples)
    return np.clip(lo + (hi - lo) * (1.0 - b), lo, hi)


def _standardize(y: np.ndarray, lo: float, hi: float) -> np.ndarray:
    # target range -> [-3, 3] so the nonlinear view is not dominated by y^2
    return 6.0 * (y - lo) / (hi - lo) - 3.0


def modality_basis(spec: LongTailSpec, y: np.ndarray) -> List[np.ndarray]:
    """Noise-free inputs phi_k(y) before projection, one array (n, p_k) per modality."""
    s = _standardize(np.asarray(y, dtype=np.float64), *spec.target_range)
    out = []
    for k in range(len(spec.modality_dims)):
        if k == 0:
            out.append(s[:, None])
        elif k == 1:
            out.append(np.stack([s, s * s / 3.0, np.sin(s)], axis=1))
        else:
            out.append(np.stack([np.sin(s * (k - 1)), np.cos(s * (k - 1))], axis=1))
    return out


def projections(spec: LongTailSpec) -> List[np.ndarray]:
    mats = []
    dummy = modality_basis(spec, np.zeros(1))
    for k, (d, phi) in enumerate(zip(spec.modality_dims, dummy)):
        p = phi.shape[1]
        mats.append(_rng(spec.seed, 1, k).normal(0.0, 1.0 / np.sqrt(p), size=(d, p)))
    return mats


def synthesize(spec: LongTailSpec, targets: Sequence[float]) -> Dataset:
    spec.validate()
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    feats = []
    for k, (phi, w) in enumerate(zip(modality_basis(spec, y), projections(spec))):
        clean = phi @ w.T
        noise = _rng(spec.seed, 2, k).normal(0.0, 1.0, size=clean.shape)
        feats.append(clean + spec.noise_scales[k] * noise)
    return Dataset(feats, y)


def assign_groups(targets, th: GroupThresholds, reference=None) -> np.ndarray:
    """Label each target Many/Middle/Few by the population of its bin.

    Bin counts come from ``reference`` (defaults to ``targets`` itself).
    """
    th.validate()
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if y.size == 0:
        return np.array([], dtype=object)
    ref = y if reference is None else np.asarray(reference, dtype=np.float64).reshape(-1)
    ref_bins = np.floor(ref / th.bin_width).astype(np.int64)
    bins, counts = np.unique(ref_bins, return_counts=True)
    lookup = dict(zip(bins.tolist(), counts.tolist()))
    n = np.array([lookup.get(b, 0) for b in np.floor(y / th.bin_width).astype(np.int64).tolist()])
    labels = np.full(y.shape, "Middle", dtype=object)
    labels[n >= th.many_min] = "Many"
    labels[n <= th.few_max] = "Few"
    return labels


def generate(spec: LongTailSpec, th: GroupThresholds) -> Dataset:
    ds = synthesize(spec, sample_targets(spec))
    ds.groups = assign_groups(ds.targets, th)
    return ds


def split(dataset: Dataset, train_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Group-stratified deterministic split.

    Per-group train counts are allocated by largest remainder so the total is
    round(fraction * n) and each group is within one sample of proportional.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    rng = _rng(seed, 3)
    order = rng.permutation(n)
    members = {g: order[dataset.groups[order] == g] for g in GROUPS}
    members = {g: m for g, m in members.items() if m.size}
    quota = {g: train_fraction * m.size for g, m in members.items()}
    take = {g: int(np.floor(q)) for g, q in quota.items()}
    left = int(round(train_fraction * n)) - sum(take.values())
    for g in sorted(quota, key=lambda g: (-(quota[g] - take[g]), GROUPS.index(g)))[: max(left, 0)]:
        take[g] += 1
    train_idx = np.sort(np.concatenate([m[: take[g]] for g, m in members.items()] or [np.array([], int)]))
    test_idx = np.sort(np.concatenate([m[take[g]:] for g, m in members.items()] or [np.array([], int)]))
    return dataset.subset(train_idx), dataset.subset(test_idx)


def group_counts(groups) -> dict:
    groups = list(groups)
    return {g: groups.count(g) for g in GROUPS}


# CSV persistence ------------------------------------------------------------


def csv_header(dims: Sequence[int]) -> List[str]:
    cols = ["y", "group"]
    for k, d in enumerate(dims):
        cols += [f"m{k + 1}_{j}" for j in range(d)]
    return cols


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def to_csv(dataset: Dataset, path: Optional[Path] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(dataset.modality_dims))
    for i in range(len(dataset)):
        row = [_fmt(dataset.targets[i]), dataset.groups[i]]
        for f in dataset.features:
            row += [_fmt(v) for v in f[i]]
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def from_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:2] != ["y", "group"]:
        raise ValueError(f"{path}: unexpected header {header[:2]}")
    dims: dict = {}
    for col in header[2:]:
        k = int(col[1:].split("_")[0])
        dims[k] = dims.get(k, 0) + 1
    y = np.array([float(r[0]) for r in body])
    groups = np.array([r[1] for r in body], dtype=object)
    values = np.array([[float(v) for v in r[2:]] for r in body]).reshape(len(body), -1)
    feats, start = [], 0
    for k in sorted(dims):
        feats.append(values[:, start : start + dims[k]])
        start += dims[k]
    return Dataset(feats, y, groups)
