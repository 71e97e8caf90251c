"""Sharpness-aware gradient modulation (SGM) for joint multimodal training.

One :func:`sgm_step` per minibatch:

1. probe the loss a normalized step uphill and downhill, score the gap,
   and turn it into a clipped modulation factor via a sliding-window median;
2. backpropagate the multimodal loss, each unimodal loss, and their sum
   separately;
3. pick min-norm weights when the multimodal and summed unimodal gradients
   conflict, uniform weights otherwise;
4. combine the two directions per shared tensor, rescale to the total-loss
   gradient norm times the modulation factor;
5. hand everything to Adam (head gradients pass through unmodified).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tape, cosine_similarity
from .losses import LossWeights, joint_losses
from .minnorm import UNIFORM, ParetoWeights, select_weights
from .model import TwoBranchNet, forward

Params = Dict[str, np.ndarray]


@dataclass
class SgmConfig:
    gamma_base: float = 1.0
    gamma_min: float = 0.5
    gamma_max: float = 15.0
    eps_probe: float = 0.05
    probe_steps: int = 1
    window_len: int = 20
    eta: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eps_num: float = 1e-8
    force_uniform: bool = False

    def validate(self) -> None:
        if not 0 < self.gamma_min <= self.gamma_base <= self.gamma_max:
            raise ValueError(f"need 0 < gamma_min <= gamma_base <= gamma_max, got {self}")
        if self.window_len < 1 or self.probe_steps < 1:
            raise ValueError("window_len and probe_steps must be >= 1")
        if self.eta <= 0 or self.eps_probe < 0:
            raise ValueError("eta must be > 0 and eps_probe >= 0")


@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0


class SharpnessWindow:
    def __init__(self, maxlen: int):
        self.scores: deque = deque(maxlen=maxlen)

    def __len__(self) -> int:
        return len(self.scores)

    def push(self, s: float) -> None:
        self.scores.append(float(s))

    def median(self) -> float:
        # np.median averages the two central values for even lengths
        return float(np.median(np.fromiter(self.scores, dtype=np.float64))) if self.scores else float("nan")


@dataclass
class SgmState:
    window: SharpnessWindow
    adam: AdamState = field(default_factory=AdamState)
    t: int = 0

    @classmethod
    def fresh(cls, cfg: SgmConfig) -> "SgmState":
        return cls(SharpnessWindow(cfg.window_len))


@dataclass
class GradBundle:
    g_mm: Params
    g_uni: Params
    g_base: Params
    g_uni_parts: List[Params]
    heads: Params
    full_base: Params


@dataclass
class Batch:
    features: List[np.ndarray]
    y: np.ndarray
    y_norm: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class StepReport:
    step: int
    s_t: float
    gamma: float
    cos_beta: float
    alpha_mm: float
    alpha_uni: float
    loss_mm: float
    loss_uni: List[float]
    loss_total: float
    dir_cos_min: float = 1.0
    norm_err_max: float = 0.0

    def to_json(self) -> str:
        keys = ("step", "s_t", "gamma", "cos_beta", "alpha_mm", "loss_mm", "loss_uni")
        d = asdict(self)
        # the baseline has no sharpness/cosine; NaN becomes null
        clean = {k: (None if isinstance(d[k], float) and not np.isfinite(d[k]) else d[k]) for k in keys}
        return json.dumps(clean)


def _global_norm(g: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(v * v)) for v in g.values())))


def _flatten(g: Mapping[str, np.ndarray], names: Sequence[str]) -> np.ndarray:
    return np.concatenate([g[n].reshape(-1) for n in names]) if names else np.zeros(0)


def probe_sharpness(
    loss_fn: Callable[[Params], float],
    grad_fn: Callable[[Params], Params],
    theta: Mapping[str, np.ndarray],
    cfg: SgmConfig,
    grad0: Optional[Params] = None,
) -> float:
    """L(theta+) - L(theta-) after ``probe_steps`` normalized ascent/descent steps.

    ``theta`` is never mutated; probing works on copies.
    """

    def walk(sign: float) -> Params:
        point = {k: np.array(v, dtype=np.float64, copy=True) for k, v in theta.items()}
        for i in range(cfg.probe_steps):
            g = grad0 if (i == 0 and grad0 is not None) else grad_fn(point)
            scale = cfg.eps_probe / (_global_norm(g) + cfg.eps_num)
            point = {k: point[k] + sign * scale * g[k] for k in point}
        return point

    hi, lo = loss_fn(walk(+1.0)), loss_fn(walk(-1.0))
    if not (np.isfinite(hi) and np.isfinite(lo)):
        raise NonFiniteError(f"sharpness probe hit a non-finite loss ({hi}, {lo})")
    return float(hi - lo)


def compute_gamma(window: SharpnessWindow, s_t: float, cfg: SgmConfig) -> float:
    """Insert ``s_t`` (negatives clamp to 0), then clip base * s_t / median."""
    if not np.isfinite(s_t):
        raise NonFiniteError(f"non-finite sharpness score {s_t}")
    s = max(float(s_t), 0.0)
    window.push(s)
    med = window.median()
    if med < cfg.eps_num and s < cfg.eps_num:
        ratio = 1.0
    else:
        ratio = s / max(med, cfg.eps_num)
    return float(np.clip(cfg.gamma_base * ratio, cfg.gamma_min, cfg.gamma_max))


def collect_gradients(net: TwoBranchNet, out, losses: Sequence[ad.Tensor]) -> GradBundle:
    """Backpropagate each loss on its own, then their sum.

    ``losses`` is ``[l_mm, l_uni_0, ...]`` built on ``out.tape``.
    """
    bound = out.bound
    if set(bound) != set(net.registry):
        raise ValueError("bound parameters do not match the network registry")
    tape = out.tape
    shared, heads = net.shared, net.heads
    per_loss = [tape.grads(l, bound) for l in losses]
    total = losses[0]
    for l in losses[1:]:
        total = total + l
    full_base = tape.grads(total, bound)

    g_mm = {n: per_loss[0][n] for n in shared}
    parts = [{n: g[n] for n in shared} for g in per_loss[1:]]
    g_uni = {n: np.zeros_like(net.params[n]) for n in shared}
    for p in parts:
        for n in shared:
            g_uni[n] = g_uni[n] + p[n]
    return GradBundle(
        g_mm=g_mm,
        g_uni=g_uni,
        g_base={n: full_base[n] for n in shared},
        g_uni_parts=parts,
        heads={n: full_base[n] for n in heads},
        full_base=full_base,
    )


def integrate_rescale(bundle: GradBundle, weights: ParetoWeights, gamma_t: float, cfg: SgmConfig):
    """Per shared tensor: combine with doubled weights, rescale to the
    total-loss gradient norm, multiply by ``gamma_t``.

    Returns ``(modulated, combined)`` dicts over the shared tensors.
    """
    modulated, combined = {}, {}
    for n in bundle.g_base:
        g = 2.0 * weights.alpha_mm * bundle.g_mm[n] + 2.0 * weights.alpha_uni * bundle.g_uni[n]
        scale = gamma_t * np.linalg.norm(bundle.g_base[n]) / (np.linalg.norm(g) + cfg.eps_num)
        combined[n] = g
        modulated[n] = scale * g
    return modulated, combined


def adam_update(state: AdamState, params: Params, grads: Mapping[str, np.ndarray], cfg) -> Params:
    """Bias-corrected Adam, in place. ``cfg`` needs eta, beta1, beta2, adam_eps."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for n, g in grads.items():
        if params[n].shape != g.shape:
            raise ValueError(f"adam: grad shape {g.shape} != param shape {params[n].shape} for {n!r}")
        m = state.m.get(n)
        if m is None:
            m = state.m[n] = np.zeros_like(g)
            state.v[n] = np.zeros_like(g)
        v = state.v[n]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[n] = params[n] - cfg.eta * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params


def _loss_fns(net: TwoBranchNet, batch: Batch, w: LossWeights):
    def loss_fn(theta: Params) -> float:
        out = forward(net, batch.features, params=theta)
        return float(sum(l.data for l in joint_losses(out, batch.y_norm, w)))

    def grad_fn(theta: Params) -> Params:
        out = forward(net, batch.features, params=theta)
        ls = joint_losses(out, batch.y_norm, w)
        total = ls[0]
        for l in ls[1:]:
            total = total + l
        return out.tape.grads(total, out.bound)

    return loss_fn, grad_fn


def _check(name: str, arrays: Mapping[str, np.ndarray], report: dict) -> None:
    for k, v in arrays.items():
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(f"non-finite {name} for {k!r}; step diagnostics: {report}")


def sgm_step(net: TwoBranchNet, batch: Batch, state: SgmState, cfg: SgmConfig, w: LossWeights) -> StepReport:
    if len(batch) < 1:
        raise ValueError("empty batch")
    out = forward(net, batch.features)
    losses = joint_losses(out, batch.y_norm, w)
    bundle = collect_gradients(net, out, losses)
    diag = {"step": state.t + 1, "losses": [float(l.data) for l in losses]}
    _check("gradient", bundle.full_base, diag)

    loss_fn, grad_fn = _loss_fns(net, batch, w)
    s_t = probe_sharpness(loss_fn, grad_fn, net.params, cfg, grad0=bundle.full_base)
    gamma = compute_gamma(state.window, s_t, cfg)

    shared = net.shared
    flat_mm, flat_uni = _flatten(bundle.g_mm, shared), _flatten(bundle.g_uni, shared)
    cos_beta = cosine_similarity(flat_mm, flat_uni, cfg.eps_num)
    weights = UNIFORM if cfg.force_uniform else select_weights(flat_mm, flat_uni)

    modulated, combined = integrate_rescale(bundle, weights, gamma, cfg)
    diag.update(s_t=s_t, gamma=gamma, cos_beta=cos_beta, alpha_mm=weights.alpha_mm)
    _check("modulated gradient", modulated, diag)

    dir_cos, norm_err = 1.0, 0.0
    for n in shared:
        gn = np.linalg.norm(combined[n])
        if gn > cfg.eps_num:
            dir_cos = min(dir_cos, cosine_similarity(modulated[n], combined[n], 0.0))
        expected = gamma * np.linalg.norm(bundle.g_base[n]) * gn / (gn + cfg.eps_num)
        norm_err = max(norm_err, abs(np.linalg.norm(modulated[n]) - expected))

    grads = dict(bundle.heads)
    grads.update(modulated)
    adam_update(state.adam, net.params, grads, cfg)
    _check("parameter", net.params, diag)
    state.t += 1

    lv = [float(l.data) for l in losses]
    return StepReport(
        step=state.t,
        s_t=float(s_t),
        gamma=gamma,
        cos_beta=cos_beta,
        alpha_mm=weights.alpha_mm,
        alpha_uni=weights.alpha_uni,
        loss_mm=lv[0],
        loss_uni=lv[1:],
        loss_total=float(sum(lv)),
        dir_cos_min=float(dir_cos),
        norm_err_max=float(norm_err),
    )


def plain_step(net: TwoBranchNet, batch: Batch, state: SgmState, cfg: SgmConfig, w: LossWeights) -> StepReport:
    """Naive joint baseline: Adam on the gradient of the summed loss."""
    out = forward(net, batch.features)
    losses = joint_losses(out, batch.y_norm, w)
    total = losses[0]
    for l in losses[1:]:
        total = total + l
    grads = out.tape.grads(total, out.bound)
    _check("gradient", grads, {"step": state.t + 1})
    adam_update(state.adam, net.params, grads, cfg)
    state.t += 1
    lv = [float(l.data) for l in losses]
    return StepReport(state.t, float("nan"), 1.0, float("nan"), 0.5, 0.5, lv[0], lv[1:], float(sum(lv)))
