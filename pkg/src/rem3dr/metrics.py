"""Regression metrics (R^2, MSE, MAE, GM, SMAPE) and Many/Middle/Few breakdowns."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict

import numpy as np

from .autodiff import EPS_NUM
from .datagen import GROUPS

REPORT_SCHEMA_VERSION = 1


@dataclass
class MetricsReport:
    r2: float
    mse: float
    mae: float
    gm: float
    smape: float
    n: int

    def to_dict(self) -> dict:
        d = asdict(self)
        # undefined R^2 is carried as NaN internally and as null on the wire
        if math.isnan(d["r2"]):
            d["r2"] = None
        return d


@dataclass
class GroupedReport:
    overall: MetricsReport
    per_group: Dict[str, MetricsReport] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "overall": self.overall.to_dict(),
            "per_group": {g: r.to_dict() for g, r in self.per_group.items()},
        }


def compute_metrics(y, yhat, gm_eps: float = 1e-6) -> MetricsReport:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.size == 0 or y.size != yhat.size:
        raise ValueError(f"need equal non-empty lengths, got {y.size} and {yhat.size}")
    err = y - yhat
    aerr = np.abs(err)
    ss_res = float(np.sum(err * err))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot >= EPS_NUM else float("nan")
    # geometric mean through logs to avoid underflow of long products
    with np.errstate(divide="ignore"):
        gm = float(np.exp(np.mean(np.log(aerr + gm_eps))))
    denom = np.abs(y) + np.abs(yhat)
    live = denom >= EPS_NUM
    terms = np.zeros_like(aerr)
    terms[live] = aerr[live] / (denom[live] / 2.0)
    return MetricsReport(
        r2=r2,
        mse=ss_res / y.size,
        mae=float(aerr.mean()),
        gm=gm,
        smape=float(terms.mean()),
        n=int(y.size),
    )


def grouped_eval(dataset, predictions, gm_eps: float = 1e-6) -> GroupedReport:
    pred = np.asarray(predictions, dtype=np.float64).reshape(-1)
    if pred.size != len(dataset):
        raise ValueError(f"{pred.size} predictions for {len(dataset)} samples")
    report = GroupedReport(compute_metrics(dataset.targets, pred, gm_eps))
    for g in GROUPS:
        mask = dataset.groups == g
        if np.any(mask):
            report.per_group[g] = compute_metrics(dataset.targets[mask], pred[mask], gm_eps)
    return report
