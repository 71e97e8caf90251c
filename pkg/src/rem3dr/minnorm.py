"""Two-objective min-norm weighting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import EPS_NUM, ShapeError, cosine_similarity


@dataclass(frozen=True)
class ParetoWeights:
    alpha_mm: float
    alpha_uni: float

    def combine(self, g1, g2) -> np.ndarray:
        return self.alpha_mm * np.asarray(g1) + self.alpha_uni * np.asarray(g2)


UNIFORM = ParetoWeights(0.5, 0.5)


def _flat(g) -> np.ndarray:
    return np.asarray(g, dtype=np.float64).reshape(-1)


def minnorm_two(g1, g2) -> ParetoWeights:
    """argmin over alpha in [0, 1] of ||alpha g1 + (1 - alpha) g2||, in closed form."""
    a, b = _flat(g1), _flat(g2)
    if a.size != b.size:
        raise ShapeError(f"minnorm_two: lengths {a.size} and {b.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise FloatingPointError("minnorm_two: non-finite gradient")
    diff = a - b
    denom = float(diff @ diff)
    if np.sqrt(denom) < EPS_NUM:
        return UNIFORM
    alpha = float(np.clip(((b - a) @ b) / denom, 0.0, 1.0))
    return ParetoWeights(alpha, 1.0 - alpha)


def select_weights(g_mm, g_uni) -> ParetoWeights:
    """Min-norm weights when the two gradients conflict, uniform otherwise."""
    a, b = _flat(g_mm), _flat(g_uni)
    if a.size != b.size:
        raise ShapeError(f"select_weights: lengths {a.size} and {b.size}")
    if cosine_similarity(a, b) < 0:
        return minnorm_two(a, b)
    return UNIFORM
