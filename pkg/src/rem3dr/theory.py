"""Numerical checks of the amplified-gradient divergence regime, the
flat-region step-size bound, and a 1-D sharp/flat well probe."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .sgm import SgmConfig, SharpnessWindow, compute_gamma, probe_sharpness


class Verdict(str, enum.Enum):
    CONVERGING = "Converging"
    OSCILLATING = "Oscillating"
    DIVERGING = "Diverging"


@dataclass
class QuadraticTestbed:
    L: float = 1.0
    u0: float = 1.0
    eta: float = 0.1
    gamma: float = 1.0
    steps: int = 50

    def validate(self) -> None:
        if self.L <= 0 or self.steps < 1:
            raise ValueError(f"invalid testbed {self}")

    @property
    def factor(self) -> float:
        return 1.0 - self.eta * self.gamma * self.L


def gd_trajectory(tb: QuadraticTestbed) -> np.ndarray:
    """Iterates of u <- u - eta*gamma*L*u on f(u) = L/2 u^2, u0 included."""
    tb.validate()
    return tb.u0 * tb.factor ** np.arange(tb.steps + 1, dtype=np.float64)


def divergence_verdict(traj: Sequence[float]) -> Verdict:
    traj = np.asarray(traj, dtype=np.float64)
    if traj.size < 3:
        raise ValueError("trajectory needs at least 3 points")
    start, end = abs(traj[0]), abs(traj[-1])
    if end > 10.0 * start:
        return Verdict.DIVERGING
    if end < 0.1 * start:
        return Verdict.CONVERGING
    return Verdict.OSCILLATING


@dataclass
class FlatRegionSpec:
    r: float = 1.0
    G_min: float = 2.0
    G_max: float = 2.0
    epsilon_g: float = 0.0
    delta: float = 0.0
    eta: float = 0.1

    def validate(self) -> None:
        if min(self.delta, self.epsilon_g) < 0 or self.r <= 0 or self.eta <= 0:
            raise ValueError(f"invalid flat-region spec {self}")
        if not 0 < self.G_min <= self.G_max <= (1.0 + self.epsilon_g) * self.G_min * (1 + 1e-12):
            raise ValueError(f"gradient bounds violate G_max <= (1+eps) G_min: {self}")


@dataclass
class FlatBound:
    gamma_base_max: float
    gamma_fixed_max: float
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs >= self.rhs * (1 - 1e-12)


def flat_bound(spec: FlatRegionSpec) -> FlatBound:
    """Largest base factor keeping every step inside the flat ball, and the
    comparison against the fixed-factor bound r / (eta G_min)."""
    spec.validate()
    base = spec.r / (spec.eta * spec.G_max * (1.0 + spec.delta))
    fixed = spec.r / (spec.eta * spec.G_min)
    return FlatBound(base, fixed, base, fixed / ((1.0 + spec.delta) * (1.0 + spec.epsilon_g)))


@dataclass
class FlatWell:
    """Radial test function around ``center`` whose gradient norm rises
    linearly from G_min at the center to G_max at radius r.

    Outside the ball the gradient norm grows by ``wall`` per unit distance
    (a steep wall when ``wall`` is large).
    """

    center: np.ndarray
    r: float
    G_min: float
    G_max: float
    wall: float = 0.0

    def grad_norm(self, rho: np.ndarray) -> np.ndarray:
        inside = self.G_min + (self.G_max - self.G_min) * np.minimum(rho, self.r) / self.r
        return inside + self.wall * np.maximum(rho - self.r, 0.0)

    def grad(self, u: np.ndarray) -> np.ndarray:
        # escaped iterates may overflow; they only need to compare as outside
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            d = np.atleast_2d(u) - self.center
            rho = np.linalg.norm(d, axis=1, keepdims=True)
            unit = np.where(rho > 0, d / rho, 0.0)
            return unit * self.grad_norm(rho)


def _validate_well(spec: FlatRegionSpec, f: FlatWell, rng: np.random.Generator, n: int = 4096) -> None:
    dim = f.center.size
    dirs = rng.normal(size=(n, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = spec.r * rng.uniform(1e-6, 1.0, size=(n, 1))
    g = np.linalg.norm(f.grad(f.center + dirs * radii), axis=1)
    tol = 1e-9 * spec.G_max
    if g.min() < spec.G_min - tol or g.max() > spec.G_max + tol:
        raise ValueError(
            f"test function gradient norms [{g.min():.6g}, {g.max():.6g}] fall outside [{spec.G_min}, {spec.G_max}]"
        )


def adversarial_kappas(delta: float, steps: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Trials x steps matrix of kappa values in [1/(1+delta), 1+delta].

    The first trials are the pure endpoint sequences and their alternation;
    the rest mix random endpoint picks with uniform draws.
    """
    lo, hi = 1.0 / (1.0 + delta), 1.0 + delta
    k = rng.uniform(lo, hi, size=(trials, steps))
    pick = rng.random(size=(trials, steps)) < 0.5
    ends = np.where(rng.random(size=(trials, steps)) < 0.5, lo, hi)
    k = np.where(pick, ends, k)
    fixed = [np.full(steps, hi), np.full(steps, lo), np.where(np.arange(steps) % 2 == 0, hi, lo)]
    for i, row in enumerate(fixed[:trials]):
        k[i] = row
    return k


def containment_sim(
    spec: FlatRegionSpec,
    f: FlatWell,
    gamma_base: float,
    steps: int = 50,
    trials: int = 100,
    seed: int = 0,
    start: Optional[np.ndarray] = None,
) -> bool:
    """True if every trial's iterates stay within distance r of the minimum.

    Each trial starts on the sphere of radius r (unless ``start`` is given)
    and runs u <- u - eta * gamma_base * kappa_t * grad f(u).
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    _validate_well(spec, f, rng)
    dim = f.center.size
    if start is None:
        dirs = rng.normal(size=(trials, dim))
        u = f.center + spec.r * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    else:
        u = np.tile(np.asarray(start, dtype=np.float64), (trials, 1))
    kappas = adversarial_kappas(spec.delta, steps, trials, rng)
    inside = np.ones(trials, dtype=bool)
    slack = 1e-12 * spec.r
    for t in range(steps):
        with np.errstate(invalid="ignore", over="ignore"):
            u = u - spec.eta * gamma_base * kappas[:, t : t + 1] * f.grad(u)
            inside &= np.linalg.norm(u - f.center, axis=1) <= spec.r + slack
    return bool(inside.all())


# double-well probe -----------------------------------------------------------


@dataclass
class WellSpec:
    centers: Sequence[float] = (0.0,)
    depths: Sequence[float] = (1.0,)
    widths: Sequence[float] = (1.0,)

    def validate(self) -> None:
        if not len(self.centers) == len(self.depths) == len(self.widths):
            raise ValueError("centers, depths and widths must align")
        if any(w <= 0 for w in self.widths):
            raise ValueError("widths must be > 0")

    def value(self, u: float) -> float:
        c, d, w = (np.asarray(a, dtype=np.float64) for a in (self.centers, self.depths, self.widths))
        return float(-np.sum(d * np.exp(-((u - c) ** 2) / (2 * w * w))))

    def grad(self, u: float) -> float:
        c, d, w = (np.asarray(a, dtype=np.float64) for a in (self.centers, self.depths, self.widths))
        return float(np.sum(d * (u - c) / (w * w) * np.exp(-((u - c) ** 2) / (2 * w * w))))


@dataclass
class ProbeResult:
    final_u: float
    final_sharpness: float
    gamma_trace: List[float] = field(default_factory=list)
    sharpness_trace: List[float] = field(default_factory=list)
    u_trace: List[float] = field(default_factory=list)


def well_sharpness(wells: WellSpec, u: float, cfg: SgmConfig) -> float:
    return probe_sharpness(
        lambda th: wells.value(float(th["u"][0])),
        lambda th: {"u": np.array([wells.grad(float(th["u"][0]))])},
        {"u": np.array([u])},
        cfg,
    )


def double_well_probe(
    wells: WellSpec,
    optimizer: str = "sgm",
    start: float = 0.0,
    steps: int = 300,
    seed: int = 0,
    cfg: Optional[SgmConfig] = None,
    fixed_gamma: float = 1.0,
    grad_noise: float = 0.0,
) -> ProbeResult:
    """1-D gradient descent on a sum of Gaussian wells.

    ``optimizer`` is ``"sgm"`` (sharpness-driven factor) or ``"fixed"``
    (constant ``fixed_gamma``).  ``grad_noise`` adds seeded Gaussian noise to
    each gradient, standing in for minibatch noise.
    """
    wells.validate()
    cfg = cfg or SgmConfig()
    if optimizer not in ("sgm", "fixed"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    rng = np.random.default_rng(seed)
    window = SharpnessWindow(cfg.window_len)
    res = ProbeResult(float(start), 0.0)
    u = float(start)
    for _ in range(steps):
        g = wells.grad(u) + grad_noise * rng.normal()
        if optimizer == "sgm":
            s = well_sharpness(wells, u, cfg)
            gamma = compute_gamma(window, s, cfg)
            res.sharpness_trace.append(s)
            res.gamma_trace.append(gamma)
        else:
            gamma = fixed_gamma
        u = u - cfg.eta * gamma * g
        if not np.isfinite(u):
            raise FloatingPointError("double-well iterate became non-finite")
        res.u_trace.append(u)
    res.final_u = u
    res.final_sharpness = well_sharpness(wells, u, cfg)
    return res


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


# verdict table ----------------------------------------------------------------


def run_checks(seed: int = 0, containment_trials: int = 10_000) -> Dict[str, dict]:
    """All theory checks as name -> {passed, ...details}."""
    out: Dict[str, dict] = {}

    for gamma, want in ((5.0, Verdict.CONVERGING), (20.0, Verdict.OSCILLATING), (25.0, Verdict.DIVERGING)):
        tb = QuadraticTestbed(L=1.0, eta=0.1, gamma=gamma, steps=50)
        v = divergence_verdict(gd_trajectory(tb))
        out[f"quadratic_gamma_{gamma:g}"] = {"passed": v is want, "verdict": v.value, "factor": tb.factor}

    rng = np.random.default_rng(seed)
    bad = 0
    checked = 0
    for _ in range(200):
        eta, L = rng.uniform(0.01, 0.5), rng.uniform(0.1, 10.0)
        prod = rng.uniform(0.2, 4.0)
        if 1.8 <= prod <= 2.2:
            continue
        tb = QuadraticTestbed(L=L, eta=eta, gamma=prod / (eta * L), steps=200)
        v = divergence_verdict(gd_trajectory(tb))
        checked += 1
        bad += v is not (Verdict.DIVERGING if prod > 2.2 else Verdict.CONVERGING)
    out["quadratic_random_band"] = {"passed": bad == 0, "checked": checked, "misclassified": bad}

    spec = FlatRegionSpec(r=1.0, G_min=2.0, G_max=2.2, epsilon_g=0.1, delta=0.1, eta=0.1)
    fb = flat_bound(spec)
    out["flat_bound_ratio"] = {"passed": fb.holds, "gamma_base_max": fb.gamma_base_max, "gamma_fixed_max": fb.gamma_fixed_max}

    well = FlatWell(np.zeros(2), spec.r, spec.G_min, spec.G_max)
    inside = containment_sim(spec, well, fb.gamma_base_max, steps=40, trials=containment_trials, seed=seed)
    out["containment_at_bound"] = {"passed": inside, "trials": containment_trials}
    steep = FlatWell(np.zeros(2), spec.r, spec.G_min, spec.G_max, wall=1e3)
    escaped = not containment_sim(spec, steep, 10 * fb.gamma_base_max, steps=40, trials=100, seed=seed)
    out["containment_exits_at_10x"] = {"passed": escaped}

    cp = coupling_probe(seed)
    out["sharpness_gamma_coupling"] = {"passed": cp["passed"], "pearson": cp["pearson"]}
    return out


@dataclass(frozen=True)
class ProbeSetup:
    """Narrow-deep well at -1, wide-shallow well at 2, start inside the narrow one.

    The step size is large enough that amplified steps can leave the narrow
    well; ``grad_noise`` stands in for minibatch noise.
    """

    wells: WellSpec = field(default_factory=lambda: WellSpec(centers=(-1.0, 2.0), depths=(1.0, 0.6), widths=(0.15, 1.0)))
    start: float = -0.8
    steps: int = 400
    eta: float = 0.03
    grad_noise: float = 1.0

    def cfg(self) -> SgmConfig:
        return SgmConfig(eta=self.eta)


def coupling_probe(seed: int = 0, setup: ProbeSetup = ProbeSetup()) -> dict:
    res = double_well_probe(setup.wells, "sgm", setup.start, setup.steps, seed, setup.cfg(), grad_noise=setup.grad_noise)
    r = pearson(res.sharpness_trace, res.gamma_trace)
    return {"passed": bool(r > 0), "pearson": r, "result": res}


def probe_experiment(seed: int = 0, setup: ProbeSetup = ProbeSetup()) -> dict:
    """Double-well experiment: coupling, narrow-vs-wide, single wide well."""
    cfg = setup.cfg()
    run = dict(steps=setup.steps, seed=seed, cfg=cfg, grad_noise=setup.grad_noise)
    cp = coupling_probe(seed, setup)
    sgm = cp["result"]
    fixed = double_well_probe(setup.wells, "fixed", setup.start, fixed_gamma=cfg.gamma_min, **run)

    wide = WellSpec(centers=(0.0,), depths=(1.0,), widths=(1.0,))
    single = {}
    for opt in ("sgm", "fixed"):
        r = double_well_probe(wide, opt, 2.5, **run)
        single[opt] = {"final_u": r.final_u, "within_3_widths": bool(abs(r.final_u) <= 3.0)}

    summary = {
        "pearson_s_gamma": cp["pearson"],
        "coupling_positive": cp["passed"],
        "final_sharpness_sgm": sgm.final_sharpness,
        "final_sharpness_fixed": fixed.final_sharpness,
        "sgm_not_sharper": bool(sgm.final_sharpness <= fixed.final_sharpness),
        "single_well_ok": all(v["within_3_widths"] for v in single.values()),
    }
    return {
        "schema_version": 1,
        "seed": seed,
        "setup": {
            "centers": list(setup.wells.centers),
            "depths": list(setup.wells.depths),
            "widths": list(setup.wells.widths),
            "start": setup.start,
            "steps": setup.steps,
            "eta": setup.eta,
            "grad_noise": setup.grad_noise,
        },
        "summary": summary,
        "sgm": {"final_u": sgm.final_u, "gamma_trace": sgm.gamma_trace, "sharpness_trace": sgm.sharpness_trace},
        "fixed": {"final_u": fixed.final_u, "gamma": cfg.gamma_min},
        "single_wide_well": single,
    }
