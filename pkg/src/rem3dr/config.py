"""Run configuration and its flat ``key = value`` text format.

One setting per line, dotted keys, JSON values, ``#`` starts a comment::

    seed = 42
    data.n_samples = 2000            # samples
    stage2.sgm.gamma_min = 0.5       # modulation lower clip

Unknown keys are rejected; missing keys keep their defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple

from .datagen import GroupThresholds, LongTailSpec
from .losses import LossWeights, MarginSchedule
from .model import ArchSpec
from .sgm import SgmConfig

CONFIG_SCHEMA_VERSION = 1


@dataclass
class Stage1Config:
    epochs: int = 10
    eta: float = 1e-3
    schedule: MarginSchedule = field(default_factory=MarginSchedule)
    weights: LossWeights = field(default_factory=LossWeights)


@dataclass
class Stage2Config:
    epochs: int = 10
    sgm: SgmConfig = field(default_factory=lambda: SgmConfig(eta=1e-3))


@dataclass
class RunConfig:
    seed: int = 42
    batch_size: int = 8
    output_dir: str = "runs/default"
    train_fraction: float = 0.8
    data: LongTailSpec = field(default_factory=LongTailSpec)
    groups: GroupThresholds = field(default_factory=GroupThresholds)
    arch: ArchSpec = field(default_factory=ArchSpec)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (contrastive pairs)")
        if self.stage1.epochs < 1 or self.stage2.epochs < 1:
            raise ValueError("epochs must be >= 1")
        self.data_spec().validate()
        self.groups.validate()
        self.arch_spec().validate()
        self.stage1.schedule.validate()
        self.stage1.weights.validate()
        self.stage2.sgm.validate()
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")

    # seeds and modality dims are derived from the top level, not stored twice
    def data_spec(self) -> LongTailSpec:
        return dataclasses.replace(self.data, seed=self.seed)

    def arch_spec(self) -> ArchSpec:
        return dataclasses.replace(self.arch, seed=self.seed + 1, modality_dims=tuple(self.data.modality_dims))


_DERIVED = {"data.seed", "arch.seed", "arch.modality_dims"}

COMMENTS = {
    "seed": "master seed; data uses it directly, weights use seed+1",
    "batch_size": "samples per minibatch (reference setting 8)",
    "output_dir": "all artifacts are written under this directory",
    "train_fraction": "fraction of samples in the training split",
    "data.n_samples": "samples generated before splitting",
    "data.target_range": "[lo, hi] in MD units (dB)",
    "data.tail_exponent": "Beta(1, k) skew; larger k = thinner tail toward lo",
    "data.modality_dims": "feature width per modality",
    "data.noise_scales": "additive Gaussian noise std per modality",
    "groups.bin_width": "MD units per histogram bin",
    "groups.many_min": "bin count at or above which samples are Many",
    "groups.few_max": "bin count at or below which samples are Few",
    "arch.encoder_hidden": "encoder layer widths",
    "arch.embed_dim": "projection width for the contrastive head",
    "arch.fusion_hidden": "fusion MLP hidden widths",
    "arch.activation": "hidden activation",
    "stage1.epochs": "contrastive pretraining epochs per modality (reference setting 60)",
    "stage1.eta": "Adam learning rate for pretraining (reference setting 1e-4)",
    "stage1.schedule.m0": "initial label margin, MD units (reference setting 0.4)",
    "stage1.schedule.beta": "margin decay per iteration (reference setting 0.0005)",
    "stage1.schedule.t_n": "iterations before the margin starts decaying",
    "stage1.weights.lambda_supcon": "weight of the contrastive term",
    "stage1.weights.w_smape": "weight of SMAPE in the regression loss",
    "stage1.weights.w_r2": "weight of (1 - R^2) in the regression loss",
    "stage1.weights.tau": "contrastive temperature",
    "stage2.epochs": "joint training epochs (reference setting 40)",
    "stage2.sgm.gamma_base": "base modulation factor (reference setting 1)",
    "stage2.sgm.gamma_min": "modulation lower clip (reference setting 0.5)",
    "stage2.sgm.gamma_max": "modulation upper clip (reference setting 15)",
    "stage2.sgm.eps_probe": "sharpness probe radius in parameter space",
    "stage2.sgm.probe_steps": "normalized ascent/descent steps per probe",
    "stage2.sgm.window_len": "sharpness scores kept for the median",
    "stage2.sgm.eta": "Adam learning rate for joint training (reference setting 1e-4)",
    "stage2.sgm.beta1": "Adam first-moment decay",
    "stage2.sgm.beta2": "Adam second-moment decay",
    "stage2.sgm.adam_eps": "Adam denominator guard",
    "stage2.sgm.eps_num": "norm/division guard",
    "stage2.sgm.force_uniform": "skip min-norm weighting (ablation / reduction check)",
}


def _flatten(obj, prefix: str = "") -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for f in dataclasses.fields(obj):
        key = prefix + f.name
        val = getattr(obj, f.name)
        if dataclasses.is_dataclass(val):
            out.update(_flatten(val, key + "."))
        elif key not in _DERIVED:
            out[key] = list(val) if isinstance(val, tuple) else val
    return out


def to_flat(cfg: RunConfig) -> Dict[str, Any]:
    return _flatten(cfg)


def render(cfg: RunConfig) -> str:
    flat = to_flat(cfg)
    width = max(len(k) for k in flat) + 3
    lines = [f"# rem3dr run configuration, schema {CONFIG_SCHEMA_VERSION}", f"schema_version = {CONFIG_SCHEMA_VERSION}"]
    section = None
    for key, val in flat.items():
        head = key.split(".")[0] if "." in key else None
        if head != section:
            lines.append("")
            section = head
        text = f"{key} = {json.dumps(val)}"
        comment = COMMENTS.get(key)
        lines.append(f"{text:<{width + 12}}# {comment}" if comment else text)
    return "\n".join(lines) + "\n"


def _coerce(default, value, key: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ValueError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ValueError(f"{key}: expected a list, got {value!r}")
        kind = type(default[0]) if default else float
        return tuple(_coerce(kind(0), v, key) for v in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValueError(f"{key}: expected a string, got {value!r}")
        return value
    raise ValueError(f"{key}: unsupported setting")


def _set(obj, path, value, key):
    head, *rest = path
    if not any(f.name == head for f in dataclasses.fields(obj)):
        raise ValueError(f"unknown config key {key!r}")
    cur = getattr(obj, head)
    if rest:
        if not dataclasses.is_dataclass(cur):
            raise ValueError(f"unknown config key {key!r}")
        return dataclasses.replace(obj, **{head: _set(cur, rest, value, key)})
    if dataclasses.is_dataclass(cur) or key in _DERIVED:
        raise ValueError(f"{key!r} is not settable")
    return dataclasses.replace(obj, **{head: _coerce(cur, value, key)})


def parse(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            value = json.loads(val)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        if key == "schema_version":
            if value != CONFIG_SCHEMA_VERSION:
                raise ValueError(f"unsupported config schema {value}")
            continue
        cfg = _set(cfg, key.split("."), value, key)
    return cfg


def load(path) -> Tuple[RunConfig, str]:
    text = Path(path).read_text()
    return parse(text), text


def smoke_config(**overrides) -> RunConfig:
    """Small configuration for quick runs and tests."""
    cfg = RunConfig(
        data=LongTailSpec(n_samples=200),
        arch=ArchSpec(encoder_hidden=(16,), embed_dim=8, fusion_hidden=(8,)),
        stage1=Stage1Config(epochs=1),
        stage2=Stage2Config(epochs=1),
    )
    return dataclasses.replace(cfg, **overrides)
