"""Two-stage training pipeline: data, per-modality pretraining, joint SGM
training (or the naive joint baseline), evaluation, theory checks."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional

import numpy as np

from . import config as config_mod
from . import datagen, theory
from .config import RunConfig
from .losses import margin_at, stage1_loss
from .metrics import REPORT_SCHEMA_VERSION, grouped_eval
from .model import TwoBranchNet, apply_checkpoint, forward, init, load_checkpoint, net_from_checkpoint, postprocess, save_checkpoint
from .sgm import AdamState, Batch, SgmState, adam_update, plain_step, sgm_step

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """Missing inputs or inconsistent artifacts."""


@dataclass
class Layout:
    root: Path

    @property
    def train_csv(self) -> Path:
        return self.root / "data" / "train.csv"

    @property
    def test_csv(self) -> Path:
        return self.root / "data" / "test.csv"

    @property
    def summary(self) -> Path:
        return self.root / "data" / "summary.json"

    def stage1_ckpt(self, k: int) -> Path:
        return self.root / "checkpoints" / f"stage1_m{k + 1}.json"

    def joint_ckpt(self, baseline: bool = False) -> Path:
        return self.root / "checkpoints" / ("baseline.json" if baseline else "joint.json")

    def log(self, name: str) -> Path:
        return self.root / "logs" / name

    def report(self, name: str) -> Path:
        return self.root / "reports" / name

    def ensure(self) -> None:
        for sub in ("data", "checkpoints", "logs", "reports"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)


def layout(cfg: RunConfig) -> Layout:
    return Layout(Path(cfg.output_dir))


def make_batch(ds: datagen.Dataset, idx=None) -> Batch:
    if idx is None:
        idx = np.arange(len(ds))
    return Batch([f[idx] for f in ds.features], ds.targets[idx], ds.normalized_targets[idx])


def minibatches(n: int, batch_size: int, seed: int, *stream: int) -> Iterator[np.ndarray]:
    order = np.random.default_rng([seed, *stream]).permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


# data -----------------------------------------------------------------------


def build_datasets(cfg: RunConfig):
    full = datagen.generate(cfg.data_spec(), cfg.groups)
    train, test = datagen.split(full, cfg.train_fraction, cfg.seed)
    return full, train, test


def cmd_gen_data(cfg: RunConfig, config_text: Optional[str] = None) -> Dict:
    cfg.validate()
    lay = layout(cfg)
    try:
        lay.ensure()
    except OSError as exc:
        raise PipelineError(f"cannot create {lay.root}: {exc}") from exc
    snapshot(cfg, config_text)
    full, train, test = build_datasets(cfg)
    datagen.to_csv(train, lay.train_csv)
    datagen.to_csv(test, lay.test_csv)
    summary = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "n_total": len(full),
        "n_train": len(train),
        "n_test": len(test),
        "group_counts": {
            "all": datagen.group_counts(full.groups),
            "train": datagen.group_counts(train.groups),
            "test": datagen.group_counts(test.groups),
        },
        "group_thresholds": asdict(cfg.groups),
        "level_codes": list(datagen.LEVELS),
        "level_lower_edges": list(datagen.LEVEL_EDGES),
        "target_range": list(cfg.data.target_range),
    }
    lay.summary.write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def load_split(cfg: RunConfig, which: str) -> datagen.Dataset:
    lay = layout(cfg)
    path = lay.train_csv if which == "train" else lay.test_csv
    if not path.exists():
        raise PipelineError(f"missing {path}; run gen-data first")
    return datagen.from_csv(path)


def snapshot(cfg: RunConfig, config_text: Optional[str]) -> Path:
    """Copy the input config verbatim (or the rendered one) into the run."""
    path = layout(cfg).root / "config.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config_text if config_text is not None else config_mod.render(cfg))
    return path


# stage 1 --------------------------------------------------------------------


def modality_params(net: TwoBranchNet, k: int) -> List[str]:
    return [n for n, owner in net.registry.items() if owner in (f"encoder{k}", f"proj{k}", f"uni{k}")]


def pretrain_modality(net: TwoBranchNet, train: datagen.Dataset, k: int, cfg: RunConfig, log_fh=None) -> List[float]:
    """Minimize the stage-1 loss for modality ``k`` with plain Adam.

    The margin clock advances once per minibatch.
    """
    s1 = cfg.stage1
    names = modality_params(net, k)
    adam = AdamState()
    hp = config_mod.SgmConfig(eta=s1.eta)
    losses, t = [], 0
    for epoch in range(s1.epochs):
        for idx in minibatches(len(train), cfg.batch_size, cfg.seed, 1, k, epoch):
            b = make_batch(train, idx)
            out = forward(net, b.features, modalities=[k])
            loss = stage1_loss(out, 0, b.y, b.y_norm, t, s1.schedule, s1.weights)
            grads = out.tape.grads(loss, {n: out.bound[n] for n in names})
            adam_update(adam, net.params, grads, hp)
            value = float(loss.data)
            losses.append(value)
            if log_fh is not None:
                rec = {"step": t + 1, "epoch": epoch, "loss": value, "margin": margin_at(t, s1.schedule)}
                log_fh.write(json.dumps(rec) + "\n")
            t += 1
    return losses


def cmd_pretrain(cfg: RunConfig) -> Dict[int, List[float]]:
    cfg.validate()
    lay = layout(cfg)
    lay.ensure()
    train = load_split(cfg, "train")
    net = init(cfg.arch_spec())
    curves = {}
    for k in range(len(cfg.data.modality_dims)):
        with lay.log(f"stage1_m{k + 1}.jsonl").open("w") as fh:
            curves[k] = pretrain_modality(net, train, k, cfg, fh)
        save_checkpoint(net, lay.stage1_ckpt(k), modality_params(net, k), meta={"stage": 1, "modality": k + 1})
        logger.info("modality %d: stage-1 loss %.4f -> %.4f", k + 1, curves[k][0], curves[k][-1])
    return curves


# stage 2 --------------------------------------------------------------------


def train_joint(net: TwoBranchNet, train: datagen.Dataset, cfg: RunConfig, baseline: bool = False, log_fh=None, max_steps=None):
    step = plain_step if baseline else sgm_step
    scfg = cfg.stage2.sgm
    state = SgmState.fresh(scfg)
    reports = []
    for epoch in range(cfg.stage2.epochs):
        for idx in minibatches(len(train), cfg.batch_size, cfg.seed, 2, epoch):
            rep = step(net, make_batch(train, idx), state, scfg, cfg.stage1.weights)
            reports.append(rep)
            if log_fh is not None:
                log_fh.write(rep.to_json() + "\n")
            if max_steps is not None and len(reports) >= max_steps:
                return reports
    return reports


def cmd_train_joint(cfg: RunConfig, baseline: bool = False):
    cfg.validate()
    lay = layout(cfg)
    lay.ensure()
    train = load_split(cfg, "train")
    net = init(cfg.arch_spec())
    if not baseline:
        for k in range(len(cfg.data.modality_dims)):
            path = lay.stage1_ckpt(k)
            if not path.exists():
                raise PipelineError(f"missing stage-1 checkpoint {path}; run pretrain first")
            apply_checkpoint(net, load_checkpoint(path))
    name = "baseline_steps.jsonl" if baseline else "joint_steps.jsonl"
    with lay.log(name).open("w") as fh:
        reports = train_joint(net, train, cfg, baseline, fh)
    save_checkpoint(net, lay.joint_ckpt(baseline), meta={"stage": 2, "baseline": baseline})
    return net, reports


# evaluation -----------------------------------------------------------------


def predict_md(net: TwoBranchNet, ds: datagen.Dataset) -> np.ndarray:
    pred = forward(net, ds.features).pred_mm.data.reshape(-1)
    return postprocess(pred, ds.levels)


def evaluate(net: TwoBranchNet, ds: datagen.Dataset):
    return grouped_eval(ds, predict_md(net, ds))


def cmd_eval(cfg: RunConfig, checkpoint: Optional[str] = None, baseline_checkpoint: Optional[str] = None) -> Dict:
    lay = layout(cfg)
    test = load_split(cfg, "test")
    ours = Path(checkpoint) if checkpoint else lay.joint_ckpt(False)
    base = Path(baseline_checkpoint) if baseline_checkpoint else lay.joint_ckpt(True)
    models = {}
    for name, path in (("rem3dr", ours), ("baseline", base)):
        if path.exists():
            models[name] = evaluate(net_from_checkpoint(path), test).to_dict()
        elif name == "rem3dr" or baseline_checkpoint:
            raise PipelineError(f"missing checkpoint {path}")
    doc = {"schema_version": REPORT_SCHEMA_VERSION, "split": "test", "models": models}
    if "baseline" in models:
        doc["comparison"] = compare(models["rem3dr"], models["baseline"])
    lay.ensure()
    lay.report("metrics.json").write_text(json.dumps(doc, indent=2) + "\n")
    return doc


def compare(ours: dict, base: dict) -> dict:
    """MSE of both models overall and per shared group, plus ours <= baseline flags."""
    rows = {"overall": (ours["overall"]["mse"], base["overall"]["mse"])}
    for g in ours["per_group"]:
        if g in base["per_group"]:
            rows[g] = (ours["per_group"][g]["mse"], base["per_group"][g]["mse"])
    return {k: {"mse_rem3dr": a, "mse_baseline": b, "rem3dr_not_worse": a <= b} for k, (a, b) in rows.items()}


# theory / probe ---------------------------------------------------------------


def cmd_theory(cfg: RunConfig, trials: int = 10_000) -> Dict:
    checks = theory.run_checks(seed=cfg.seed, containment_trials=trials)
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "all_passed": all(c["passed"] for c in checks.values()),
        "checks": checks,
    }
    try:
        lay = layout(cfg)
        lay.ensure()
        lay.report("theory.json").write_text(json.dumps(doc, indent=2) + "\n")
    except OSError as exc:
        logger.warning("could not write theory report: %s", exc)
    return doc


def cmd_probe(cfg: RunConfig) -> Dict:
    doc = theory.probe_experiment(seed=cfg.seed)
    lay = layout(cfg)
    lay.ensure()
    lay.report("probe.json").write_text(json.dumps(doc, indent=2) + "\n")
    return doc


def run_all(cfg: RunConfig, config_text: Optional[str] = None) -> Dict:
    """gen-data, pretrain, train-joint, baseline, eval."""
    cmd_gen_data(cfg, config_text)
    cmd_pretrain(cfg)
    cmd_train_joint(cfg, baseline=False)
    cmd_train_joint(cfg, baseline=True)
    return cmd_eval(cfg)
