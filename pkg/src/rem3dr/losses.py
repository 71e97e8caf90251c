"""Adaptive-margin supervised contrastive loss and the SMAPE + R^2 regression loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Set

import numpy as np

from . import autodiff as ad
from .autodiff import EPS_NUM, Tensor


@dataclass
class MarginSchedule:
    m0: float = 0.4
    beta: float = 0.0005
    t_n: int = 100

    def validate(self) -> None:
        if self.m0 <= 0 or self.beta <= 0 or self.t_n < 0:
            raise ValueError(f"invalid margin schedule {self}")


@dataclass
class LossWeights:
    lambda_supcon: float = 0.1
    w_smape: float = 1.0
    w_r2: float = 1.0
    tau: float = 0.07

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.lambda_supcon < 0:
            raise ValueError("lambda_supcon must be >= 0")


@dataclass
class BatchPartition:
    positives: Dict[int, Set[int]] = field(default_factory=dict)
    negatives: Dict[int, Set[int]] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.positives and not self.negatives


def margin_at(t: float, s: MarginSchedule) -> float:
    if t < 0:
        raise ValueError("t must be >= 0")
    if t < s.t_n:
        return s.m0
    return s.m0 * math.exp(-s.beta * (t - s.t_n))


def partition(labels, m: float) -> BatchPartition:
    """Positives are strictly closer than ``m`` in label space; self excluded."""
    if m <= 0:
        raise ValueError("margin must be > 0")
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    n = y.size
    if n < 2:
        return BatchPartition()
    close = np.abs(y[:, None] - y[None, :]) < m
    part = BatchPartition()
    for i in range(n):
        others = [j for j in range(n) if j != i]
        part.positives[i] = {j for j in others if close[i, j]}
        part.negatives[i] = {j for j in others if not close[i, j]}
    return part


def _masks(part: BatchPartition, n: int):
    pos = np.zeros((n, n))
    for i, js in part.positives.items():
        pos[i, list(js)] = 1.0
    return pos, 1.0 - np.eye(n)


def supcon_loss(z: Tensor, part: BatchPartition, tau: float) -> Tensor:
    """Mean over anchors that have at least one positive of the per-anchor
    average -log softmax(z_i . z_p / tau) over all non-self candidates."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    n = z.shape[0]
    norms = np.linalg.norm(z.data, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError(f"supcon_loss expects unit-norm embeddings, got norms in [{norms.min()}, {norms.max()}]")
    if part.empty or n < 2:
        return ad.constant(0.0)
    pos, others = _masks(part, n)
    n_pos = pos.sum(axis=1, keepdims=True)
    anchors = (n_pos[:, 0] > 0).astype(np.float64)
    if anchors.sum() == 0:
        return ad.constant(0.0)

    logits = (z @ z.T) * (1.0 / tau)
    # log-sum-exp over candidates a != i; logits are bounded by 1/tau so exp is safe
    denom = ad.log(ad.tsum(ad.exp(logits) * others, axis=1))
    log_prob = logits - denom
    per_anchor = ad.tsum(log_prob * pos, axis=1) * (-1.0 / np.maximum(n_pos, 1.0))
    return ad.tsum(per_anchor * anchors[:, None]) * (1.0 / anchors.sum())


def smape_fraction(pred: Tensor, target) -> Tensor:
    t = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    denom = (ad.absolute(pred) + np.abs(t)) * 0.5
    live = (np.abs(pred.data) + np.abs(t)) >= EPS_NUM
    # masked-out terms contribute 0; their denominator is swapped for 1
    safe = denom * live + (1.0 - live)
    return ad.mean(ad.absolute(pred - t) / safe * live)


def regression_loss(pred: Tensor, target, w: LossWeights) -> Tensor:
    """w_smape * SMAPE (fraction form) + w_r2 * (1 - R^2) on the batch.

    The R^2 term is dropped when the batch targets have (near) zero variance.
    """
    t = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    if t.size < 1:
        raise ValueError("empty batch")
    loss = smape_fraction(pred, t) * w.w_smape
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if t.size > 1 and ss_tot / t.size >= EPS_NUM:
        resid = pred - t
        loss = loss + ad.tsum(resid * resid) * (w.w_r2 / ss_tot)
    return loss


def stage1_loss(out, k: int, y_raw, y_norm, t: float, schedule: MarginSchedule, w: LossWeights) -> Tensor:
    """Regression on modality ``k``'s unimodal head plus lambda * SupCon on its embeddings.

    ``out`` is a ForwardOut whose ``pred_uni``/``z`` are indexed in the order
    of the modalities it was run on; ``k`` indexes into that order.
    """
    reg = regression_loss(out.pred_uni[k], y_norm, w)
    if w.lambda_supcon == 0:
        return reg
    part = partition(y_raw, margin_at(t, schedule))
    return reg + supcon_loss(out.z[k], part, w.tau) * w.lambda_supcon


def joint_losses(out, y_norm, w: LossWeights) -> List[Tensor]:
    """[l_mm, l_uni_0, ..., l_uni_{K-1}] on one tape."""
    return [regression_loss(out.pred_mm, y_norm, w)] + [regression_loss(p, y_norm, w) for p in out.pred_uni]
