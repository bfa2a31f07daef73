"""Interval pairs (l, t) for secant training, the interval-length curriculum, and loss weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import expit

from .interpolants import InterpolantSpec, conditional_law, conditional_time_score, sample_xt

SAMPLERS = ("uniform", "logit_normal", "variance_importance")
SUPERVISION = ("cia", "fixed")


@dataclass
class ImportanceGrid:
    """Piecewise-constant density over [lo, hi] with weight 1/Var of the conditional score.

    Knot ``i`` owns the cell between the midpoints to its neighbours, so the
    two boundary cells are half-width. ``cdf[i]`` is the probability of
    landing in cells ``0..i``.
    """

    knots: np.ndarray
    weights: np.ndarray
    cdf: np.ndarray = field(init=False)
    edges: np.ndarray = field(init=False)
    density: np.ndarray = field(init=False)

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.knots.size < 2 or np.any(np.diff(self.knots) <= 0):
            raise ValueError("need at least two strictly increasing knots")
        if self.weights.shape != self.knots.shape:
            raise ValueError("one weight per knot")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights <= 0):
            raise ValueError("weights must be positive and finite")
        mids = 0.5 * (self.knots[1:] + self.knots[:-1])
        self.edges = np.concatenate([[self.knots[0]], mids, [self.knots[-1]]])
        widths = np.diff(self.edges)
        mass = self.weights * widths
        total = mass.sum()
        self.cdf = np.cumsum(mass) / total
        self.cdf[-1] = 1.0
        self.density = self.weights / total

    @property
    def probabilities(self) -> np.ndarray:
        return np.diff(np.concatenate([[0.0], self.cdf]))

    def cell_of(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return np.clip(np.searchsorted(self.edges, t, side="right") - 1, 0, self.knots.size - 1)

    def weight_at(self, t) -> np.ndarray:
        """lambda(t): normalised density of the knot whose cell contains t."""
        return self.density[self.cell_of(t)]

    def sample(self, rng, n: int) -> np.ndarray:
        u = rng.random(n)
        cell = np.minimum(np.searchsorted(self.cdf, u, side="right"), self.knots.size - 1)
        lo, hi = self.edges[cell], self.edges[cell + 1]
        return lo + (hi - lo) * rng.random(n)


def grid_from_variances(knots, variances, var_floor: float = 1e-6) -> ImportanceGrid:
    variances = np.asarray(variances, dtype=np.float64)
    variances = np.where(np.isfinite(variances), variances, np.inf)
    return ImportanceGrid(knots, 1.0 / (np.maximum(variances, 0.0) + var_floor))


def build_importance_grid(spec: InterpolantSpec, problem, G: int = 64, N: int = 2048, rng=None,
                          var_floor: float = 1e-6) -> ImportanceGrid:
    """Monte Carlo estimate of Var(conditional time score) at ``G`` uniform knots."""
    if G < 2 or N < 100:
        raise ValueError("need G >= 2 and N >= 100")
    rng = np.random.default_rng(rng)
    lo, hi = spec.time_range
    knots = np.linspace(lo, hi, G)
    variances = np.empty(G)
    for i, tk in enumerate(knots):
        x0 = problem.sample_p0(rng, N)
        x1 = problem.sample_p1(rng, N)
        z = rng.standard_normal(x0.shape)
        t = np.full(N, tk)
        xt = sample_xt(spec, x0, x1, t, z)
        score = conditional_time_score(conditional_law(spec, x0, x1, t), xt)
        score = score[np.isfinite(score)]
        variances[i] = score.var() if score.size > 1 else np.inf
    return grid_from_variances(knots, variances, var_floor)


@dataclass
class TimeSampler:
    """Marginal law p on [lo, hi] from which both interval endpoints are drawn."""

    kind: str = "uniform"
    m: float = -0.4
    s: float = 1.0
    grid: ImportanceGrid | None = None
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.kind!r}; expected one of {SAMPLERS}")
        if self.kind == "variance_importance" and self.grid is None:
            raise ValueError("variance_importance sampler needs an ImportanceGrid")

    def draw(self, rng, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return self.lo + (self.hi - self.lo) * rng.random(n)
        if self.kind == "logit_normal":
            return self.lo + (self.hi - self.lo) * expit(rng.normal(self.m, self.s, n))
        return self.grid.sample(rng, n)


@dataclass
class TimePairPolicy:
    sampler: TimeSampler = field(default_factory=TimeSampler)
    supervision: str = "cia"
    rho: float = 0.0
    d0: float = 0.01
    anneal_fraction: float = 0.5

    def __post_init__(self):
        if self.supervision not in SUPERVISION:
            raise ValueError(f"unknown supervision {self.supervision!r}; expected one of {SUPERVISION}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if not (0.0 < self.d0 <= 1.0 and 0.0 < self.anneal_fraction <= 1.0):
            raise ValueError("d0 and anneal_fraction must lie in (0, 1]")

    def d_max(self, step: int, total_steps: int) -> float:
        if self.supervision != "cia":
            return 1.0
        return d_max_schedule(step, total_steps, self.d0, self.anneal_fraction)


def d_max_schedule(step: int, total_steps: int, d0: float, anneal_fraction: float) -> float:
    """Linear ramp from ``d0`` to 1 over the first ``anneal_fraction`` of training."""
    horizon = anneal_fraction * total_steps
    frac = 1.0 if horizon <= 0 else min(1.0, step / horizon)
    return d0 + (1.0 - d0) * frac


def sample_pairs(policy: TimePairPolicy, rng, step: int, total_steps: int, n: int):
    """Draw ``n`` ordered pairs; returns ``(l, t, is_tangent)`` arrays."""
    if step > total_steps:
        raise ValueError("step exceeds total_steps")
    a = policy.sampler.draw(rng, n)
    b = policy.sampler.draw(rng, n)
    l, t = np.minimum(a, b), np.maximum(a, b)
    if policy.supervision == "fixed":
        tangent = rng.random(n) < policy.rho
        l = np.where(tangent, t, l)
    else:
        dm = policy.d_max(step, total_steps)
        l = np.where(t - l > dm, t - dm, l)
    return l, t, l == t


def sample_pair(policy: TimePairPolicy, rng, step: int, total_steps: int):
    l, t, tangent = sample_pairs(policy, rng, step, total_steps, 1)
    return float(l[0]), float(t[0]), bool(tangent[0])


def eta_marginal_check(sampler: TimeSampler, rng, n: int) -> float:
    """KS distance between eta ~ U[l, t] (ordered pair from ``sampler``) and direct draws."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(rng)
    a, b = sampler.draw(rng, n), sampler.draw(rng, n)
    l, t = np.minimum(a, b), np.maximum(a, b)
    eta = l + (t - l) * rng.random(n)
    direct = sampler.draw(rng, n)
    return float(stats.ks_2samp(eta, direct).statistic)
