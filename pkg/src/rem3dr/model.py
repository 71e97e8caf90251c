"""Two-branch multimodal MLP with projection, unimodal and fusion heads."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .datagen import LEVELS

CHECKPOINT_FORMAT = "rem3dr-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ArchSpec:
    modality_dims: Tuple[int, ...] = (16, 8)
    encoder_hidden: Tuple[int, ...] = (64, 64)
    embed_dim: int = 32
    fusion_hidden: Tuple[int, ...] = (32,)
    activation: str = "relu"
    seed: int = 7

    def validate(self) -> None:
        widths = [*self.modality_dims, *self.encoder_hidden, self.embed_dim, *self.fusion_hidden]
        if any(int(w) < 1 for w in widths) or not self.encoder_hidden:
            raise ValueError(f"all layer widths must be >= 1: {self}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")


@dataclass
class TwoBranchNet:
    arch: ArchSpec
    params: Dict[str, np.ndarray]
    # parameter name -> owning block, e.g. "encoder0", "proj1", "uni0", "fusion"
    registry: Dict[str, str]

    @property
    def shared(self) -> List[str]:
        return [n for n, owner in self.registry.items() if owner.startswith("encoder")]

    @property
    def heads(self) -> List[str]:
        return [n for n, owner in self.registry.items() if not owner.startswith("encoder")]

    def owned_by(self, prefix: str) -> List[str]:
        return [n for n, owner in self.registry.items() if owner == prefix]

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "TwoBranchNet":
        return TwoBranchNet(self.arch, {k: v.copy() for k, v in self.params.items()}, dict(self.registry))


@dataclass
class ForwardOut:
    pred_mm: Tensor
    pred_uni: List[Tensor]
    z: List[Tensor]
    bound: Dict[str, Tensor] = field(default_factory=dict)
    tape: Optional[Tape] = None


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def _layer_sizes(arch: ArchSpec, k: int) -> List[int]:
    return [arch.modality_dims[k], *arch.encoder_hidden]


def init(arch: ArchSpec) -> TwoBranchNet:
    arch.validate()
    rng = np.random.default_rng(arch.seed)
    params: Dict[str, np.ndarray] = {}
    registry: Dict[str, str] = {}

    def dense(prefix, owner, sizes):
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            params[f"{prefix}.W{i}"] = _glorot(rng, a, b)
            params[f"{prefix}.b{i}"] = np.zeros((1, b))
            registry[f"{prefix}.W{i}"] = owner
            registry[f"{prefix}.b{i}"] = owner

    width = arch.encoder_hidden[-1]
    for k in range(len(arch.modality_dims)):
        dense(f"enc{k}", f"encoder{k}", _layer_sizes(arch, k))
    for k in range(len(arch.modality_dims)):
        dense(f"proj{k}", f"proj{k}", [width, arch.embed_dim])
        dense(f"uni{k}", f"uni{k}", [width, 1])
    dense("fusion", "fusion", [width * len(arch.modality_dims), *arch.fusion_hidden, 1])
    return TwoBranchNet(arch, params, registry)


def _mlp(x, bound, prefix: str, n_layers: int, last_act: bool):
    for i in range(n_layers):
        x = x @ bound[f"{prefix}.W{i}"] + bound[f"{prefix}.b{i}"]
        if i < n_layers - 1 or last_act:
            x = ad.relu(x)
    return x


def bind(net: TwoBranchNet, tape: Tape, params: Optional[Mapping[str, np.ndarray]] = None) -> Dict[str, Tensor]:
    """Leaf tensors for every parameter; tensors already on ``tape`` are reused."""
    src = net.params if params is None else params
    out = {}
    for name in net.params:
        v = src[name]
        out[name] = v if isinstance(v, Tensor) and v.tape is tape else tape.variable(v)
    return out


def forward(
    net: TwoBranchNet,
    features: Sequence[np.ndarray],
    tape: Optional[Tape] = None,
    params: Optional[Mapping[str, np.ndarray]] = None,
    modalities: Optional[Sequence[int]] = None,
) -> ForwardOut:
    """Run every head on one tape.

    ``params`` overrides the network's own values without mutating it.
    Restricting ``modalities`` skips the fusion head (``pred_mm`` is None).
    """
    arch = net.arch
    K = len(arch.modality_dims)
    if len(features) != K:
        raise ValueError(f"expected {K} modalities, got {len(features)}")
    for k, x in enumerate(features):
        if x.ndim != 2 or x.shape[1] != arch.modality_dims[k]:
            raise ValueError(f"modality {k}: expected (n, {arch.modality_dims[k]}), got {x.shape}")
    tape = Tape() if tape is None else tape
    bound = bind(net, tape, params)
    active = list(range(K)) if modalities is None else list(modalities)
    n_enc = len(arch.encoder_hidden)

    hidden, pred_uni, z = {}, [], []
    for k in active:
        h = _mlp(ad.constant(features[k]), bound, f"enc{k}", n_enc, last_act=True)
        hidden[k] = h
        e = _mlp(h, bound, f"proj{k}", 1, last_act=False)
        z.append(e / ad.l2_norm(e, axis=1))
        pred_uni.append(ad.sigmoid(_mlp(h, bound, f"uni{k}", 1, last_act=False)))

    pred_mm = None
    if len(active) == K:
        fused = ad.concat([hidden[k] for k in range(K)], axis=1)
        pred_mm = ad.sigmoid(_mlp(fused, bound, "fusion", len(arch.fusion_hidden) + 1, last_act=False))
    return ForwardOut(pred_mm, pred_uni, z, bound, tape)


def predict(net: TwoBranchNet, features: Sequence[np.ndarray]) -> np.ndarray:
    return forward(net, features).pred_mm.data.reshape(-1)


def postprocess(pred_norm, level):
    """Rescale a [0, 1] prediction by its severity level code."""
    levels = np.asarray(level)
    bad = ~np.isin(levels, LEVELS)
    if np.any(bad):
        raise ValueError(f"unknown level code(s) {np.unique(levels[bad]).tolist()}; expected one of {LEVELS}")
    out = np.asarray(pred_norm, dtype=np.float64) * levels
    return float(out) if out.ndim == 0 else out


# checkpoints ----------------------------------------------------------------


def arch_to_dict(arch: ArchSpec) -> dict:
    return {
        "modality_dims": list(arch.modality_dims),
        "encoder_hidden": list(arch.encoder_hidden),
        "embed_dim": arch.embed_dim,
        "fusion_hidden": list(arch.fusion_hidden),
        "activation": arch.activation,
        "seed": arch.seed,
    }


def save_checkpoint(net: TwoBranchNet, path, names: Optional[Sequence[str]] = None, meta: Optional[dict] = None) -> None:
    """JSON checkpoint: ``params`` maps name -> {shape, owner, data (row-major)}."""
    names = list(net.params) if names is None else list(names)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": arch_to_dict(net.arch),
        "meta": meta or {},
        "params": {
            n: {"shape": list(net.params[n].shape), "owner": net.registry[n], "data": net.params[n].reshape(-1).tolist()}
            for n in names
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT}")
    return doc


def apply_checkpoint(net: TwoBranchNet, doc: dict, names: Optional[Sequence[str]] = None) -> None:
    stored = doc["params"]
    names = list(stored) if names is None else list(names)
    for n in names:
        if n not in net.params or n not in stored:
            raise ValueError(f"checkpoint/arch mismatch on parameter {n!r}")
        shape = tuple(stored[n]["shape"])
        if shape != net.params[n].shape:
            raise ValueError(f"checkpoint/arch mismatch on {n!r}: {shape} vs {net.params[n].shape}")
        net.params[n] = np.array(stored[n]["data"], dtype=np.float64).reshape(shape)


def net_from_checkpoint(path) -> TwoBranchNet:
    doc = load_checkpoint(path)
    a = doc["arch"]
    arch = ArchSpec(
        tuple(a["modality_dims"]), tuple(a["encoder_hidden"]), a["embed_dim"], tuple(a["fusion_hidden"]), a["activation"], a["seed"]
    )
    net = init(arch)
    apply_checkpoint(net, doc)
    return net
