"""Synthetic density-ratio and mutual-information problems with analytic oracles."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

Sampler = Callable[[np.random.Generator, int], np.ndarray]

SHAPES = ("moons", "circles", "eight_gaussians", "swissroll", "checkerboard", "pinwheel",
          "two_spirals", "rings")
PATHOLOGICAL = ("additive_noise", "edge_singular_gauss", "half_cube", "asinh")


@dataclass
class BenchmarkProblem:
    name: str
    dim: int
    sample_p0: Sampler
    sample_p1: Sampler
    oracle_log_ratio: Optional[Callable[[np.ndarray], np.ndarray]] = None
    oracle_mi: Optional[float] = None
    oracle_log_p1: Optional[Callable[[np.ndarray], np.ndarray]] = None
    # p0 = N(0, I) exactly; needed by the deterministic interpolant's conditional law
    p0_standard_normal: bool = True


def standard_normal_log_pdf(x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return -0.5 * np.sum(x * x, axis=1) - 0.5 * x.shape[1] * math.log(2.0 * math.pi)


def _standard_normal_sampler(d):
    return lambda rng, n: rng.standard_normal((n, d))


def make_gaussian_ratio(d: int, mean1=None, cov1_diag=None) -> BenchmarkProblem:
    """p0 = N(0, I_d), p1 = N(mean1, diag(cov1_diag))."""
    mean1 = np.zeros(d) if mean1 is None else np.asarray(mean1, dtype=np.float64).reshape(d)
    var1 = np.ones(d) if cov1_diag is None else np.asarray(cov1_diag, dtype=np.float64).reshape(d)
    if np.any(var1 <= 0):
        raise ValueError("cov1_diag must be positive")
    sd1 = np.sqrt(var1)

    def log_p1(x):
        x = np.atleast_2d(x)
        r = (x - mean1) / sd1
        return -0.5 * np.sum(r * r, axis=1) - np.sum(np.log(sd1)) - 0.5 * d * math.log(2 * math.pi)

    return BenchmarkProblem(
        name=f"gaussian_ratio_d{d}",
        dim=d,
        sample_p0=_standard_normal_sampler(d),
        sample_p1=lambda rng, n: mean1 + sd1 * rng.standard_normal((n, d)),
        oracle_log_ratio=lambda x: log_p1(x) - standard_normal_log_pdf(x),
        oracle_log_p1=log_p1,
    )


def gaussian_path_moments(tau, mean1: float = 1.0, var1: float = 1.0):
    """Mean, variance and their tau-derivatives of the 1D linear path from N(0, 1) to N(mean1, var1)."""
    tau = np.asarray(tau, dtype=np.float64)
    m = tau * mean1
    v = (1.0 - tau) ** 2 + tau**2 * var1
    return m, v, np.full_like(tau, mean1), -2.0 * (1.0 - tau) + 2.0 * tau * var1


def gaussian_path_tangent(x, tau, mean1: float = 1.0, var1: float = 1.0):
    """d/dtau log p_tau(x) for the path above, at fixed x."""
    m, v, dm, dv = gaussian_path_moments(tau, mean1, var1)
    r = np.asarray(x, dtype=np.float64) - m
    return -0.5 * dv / v + r * dm / v + 0.5 * r * r * dv / (v * v)


def gaussian_path_log_density(x, tau, mean1: float = 1.0, var1: float = 1.0):
    m, v, _, _ = gaussian_path_moments(tau, mean1, var1)
    r = np.asarray(x, dtype=np.float64) - m
    return -0.5 * r * r / v - 0.5 * np.log(2.0 * math.pi * v)


def block_rho(block_mi: float) -> float:
    """Correlation of a unit-variance bivariate normal with the given MI (nats)."""
    if block_mi < 0:
        raise ValueError("MI must be nonnegative")
    return math.sqrt(-math.expm1(-2.0 * block_mi))


def make_blockwise_gaussian_mi(d: int, target_mi_nats: float) -> BenchmarkProblem:
    """p1 = N(0, Sigma) with d/2 blocks [[1, rho], [rho, 1]]; p0 = N(0, I).

    Coordinates are laid out as ``[x_1..x_k, y_1..y_k]`` with ``k = d/2`` and
    block ``i`` coupling ``x_i`` and ``y_i``, so p0 is the product of the
    marginals of the ``x`` and ``y`` halves.
    """
    if d % 2:
        raise ValueError("d must be even")
    if target_mi_nats < 0:
        raise ValueError("target MI must be nonnegative")
    k = d // 2
    rho = block_rho(2.0 * target_mi_nats / d)
    if rho >= 1.0:
        raise ValueError("per-block MI infeasible")
    cov = np.eye(d)
    cov[np.arange(k), np.arange(k) + k] = rho
    cov[np.arange(k) + k, np.arange(k)] = rho
    chol = np.linalg.cholesky(cov)
    prec = np.linalg.inv(cov)
    _, logdet = np.linalg.slogdet(cov)

    def log_p1(x):
        x = np.atleast_2d(x)
        return -0.5 * np.einsum("ni,ij,nj->n", x, prec, x) - 0.5 * logdet - 0.5 * d * math.log(2 * math.pi)

    problem = BenchmarkProblem(
        name=f"blockwise_gaussian_d{d}_mi{target_mi_nats:g}",
        dim=d,
        sample_p0=_standard_normal_sampler(d),
        sample_p1=lambda rng, n: rng.standard_normal((n, d)) @ chol.T,
        oracle_log_ratio=lambda x: log_p1(x) - standard_normal_log_pdf(x),
        oracle_mi=float(target_mi_nats),
        oracle_log_p1=log_p1,
    )
    problem.rho = rho
    problem.cov = cov
    return problem


def _product_of_marginals(joint: Sampler, split: int) -> Sampler:
    """Break the dependence by permuting the second block of a joint batch."""

    def sample(rng, n):
        xy = joint(rng, n)
        xy[:, split:] = xy[rng.permutation(n), split:]
        return xy

    return sample


def _half_cube(x):
    return np.sign(x) * np.abs(x) ** 1.5


def make_pathological_mi(kind: str, param: float) -> BenchmarkProblem:
    """Two-dimensional (X, Y) MI problems; ``param`` is eps_u for additive_noise, else rho."""
    if kind not in PATHOLOGICAL:
        raise ValueError(f"unknown pathological problem {kind!r}; expected one of {PATHOLOGICAL}")
    if kind == "additive_noise":
        eps_u = float(param)
        if not 0.0 < eps_u <= 0.5:
            raise ValueError("additive_noise needs 0 < eps_u <= 0.5")

        def joint(rng, n):
            x = rng.random(n)
            return np.stack([x, x + rng.uniform(-eps_u, eps_u, n)], axis=1)

        # h(Y) = eps_u for the trapezoidal law of Y, and h(Y | X) = log(2 eps_u)
        mi = eps_u - math.log(2.0 * eps_u)
        return BenchmarkProblem(
            name=f"additive_noise_{eps_u:g}", dim=2,
            sample_p0=_product_of_marginals(joint, 1), sample_p1=joint,
            oracle_mi=mi, p0_standard_normal=False,
        )

    rho = float(param)
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must lie in (-1, 1)")
    cov = np.array([[1.0, rho], [rho, 1.0]])
    chol = np.linalg.cholesky(cov)
    transform = {"edge_singular_gauss": None, "half_cube": _half_cube, "asinh": np.arcsinh}[kind]

    def joint(rng, n):
        xy = rng.standard_normal((n, 2)) @ chol.T
        return xy if transform is None else transform(xy)

    mi = -0.5 * math.log(1.0 - rho * rho)
    problem = BenchmarkProblem(
        name=f"{kind}_{rho:g}", dim=2,
        sample_p0=_product_of_marginals(joint, 1), sample_p1=joint,
        oracle_mi=mi, p0_standard_normal=transform is None,
    )
    if transform is None:
        prec = np.linalg.inv(cov)
        logdet = math.log(1.0 - rho * rho)

        def log_p1(x):
            x = np.atleast_2d(x)
            return -0.5 * np.einsum("ni,ij,nj->n", x, prec, x) - 0.5 * logdet - math.log(2 * math.pi)

        problem.oracle_log_p1 = log_p1
        problem.oracle_log_ratio = lambda x: log_p1(x) - standard_normal_log_pdf(x)
    return problem


# -- 2D shapes ---------------------------------------------------------------
# Conventional toy-density parametrisations; constants are noted inline.


def _clip_norm(noise, bound):
    norm = np.linalg.norm(noise, axis=1, keepdims=True)
    return noise * np.minimum(1.0, bound / np.maximum(norm, 1e-300))


def _moons(rng, n, noise):
    # outer arc: unit circle upper half; inner arc: shifted to (1, 0.5)
    theta = math.pi * rng.random(n)
    upper = rng.random(n) < 0.5
    pts = np.where(
        upper[:, None],
        np.stack([np.cos(theta), np.sin(theta)], axis=1),
        np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1),
    )
    return pts + _clip_norm(noise * rng.standard_normal((n, 2)), 3.0 * noise)


def _circles(rng, n, noise):
    # radii 2 and 1
    theta = 2 * math.pi * rng.random(n)
    r = np.where(rng.random(n) < 0.5, 2.0, 1.0)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1) + noise * rng.standard_normal((n, 2))


EIGHT_GAUSSIANS_RADIUS = 2.0 * math.sqrt(2.0)


def _eight_gaussians(rng, n, noise):
    angle = (math.pi / 4) * rng.integers(0, 8, n)
    centers = EIGHT_GAUSSIANS_RADIUS * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    return centers + noise * rng.standard_normal((n, 2))


def _swissroll(rng, n, noise):
    # arc parameter 1.5 pi (1 + 2u), scaled by 1/5
    s = 1.5 * math.pi * (1.0 + 2.0 * rng.random(n))
    return np.stack([s * np.cos(s), s * np.sin(s)], axis=1) / 5.0 + noise * rng.standard_normal((n, 2))


def _checkerboard(rng, n, noise):
    # 4x4 board on [-2, 2]^2, cells with (i + j) even
    cells = np.array([(i, j) for i in range(-2, 2) for j in range(-2, 2) if (i + j) % 2 == 0], dtype=float)
    pick = cells[rng.integers(0, len(cells), n)]
    return pick + rng.random((n, 2)) + noise * rng.standard_normal((n, 2))


def _pinwheel(rng, n, noise):
    # 5 arms, radial std 0.3, tangential std 0.1, rate 0.25 (noise scales both stds)
    arms, rate = 5, 0.25
    radial_std, tangential_std = 0.3 * (1 + noise), 0.1 * (1 + noise)
    labels = rng.integers(0, arms, n)
    feats = rng.standard_normal((n, 2)) * np.array([radial_std, tangential_std])
    feats[:, 0] += 1.0
    angles = 2 * math.pi * labels / arms + rate * np.exp(feats[:, 0])
    c, s = np.cos(angles), np.sin(angles)
    rot = np.stack([np.stack([c, -s], axis=1), np.stack([s, c], axis=1)], axis=1)
    return 2.0 * np.einsum("nij,nj->ni", rot, feats)


def _two_spirals(rng, n, noise):
    # sqrt-uniform arc length up to 540 degrees, scaled by 1/3
    s = np.sqrt(rng.random(n)) * 3 * math.pi
    sign = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    pts = sign[:, None] * np.stack([-np.cos(s) * s, np.sin(s) * s], axis=1)
    return pts / 3.0 + noise * rng.standard_normal((n, 2))


def _rings(rng, n, noise):
    # four rings of radius 0.75, 1.5, 2.25, 3
    r = 0.75 * rng.integers(1, 5, n)
    theta = 2 * math.pi * rng.random(n)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1) + noise * rng.standard_normal((n, 2))


_SHAPE_FNS = {
    "moons": _moons, "circles": _circles, "eight_gaussians": _eight_gaussians,
    "swissroll": _swissroll, "checkerboard": _checkerboard, "pinwheel": _pinwheel,
    "two_spirals": _two_spirals, "rings": _rings,
}
DEFAULT_NOISE = {
    "moons": 0.1, "circles": 0.08, "eight_gaussians": 0.35, "swissroll": 0.1,
    "checkerboard": 0.0, "pinwheel": 0.0, "two_spirals": 0.1, "rings": 0.08,
}


def make_2d_shapes(kind: str, noise: float | None = None) -> BenchmarkProblem:
    if kind not in _SHAPE_FNS:
        raise ValueError(f"unknown 2D shape {kind!r}; expected one of {SHAPES}")
    noise = DEFAULT_NOISE[kind] if noise is None else float(noise)
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    fn = _SHAPE_FNS[kind]
    problem = BenchmarkProblem(
        name=kind, dim=2, sample_p0=_standard_normal_sampler(2),
        sample_p1=lambda rng, n: fn(rng, n, noise),
    )
    if kind == "eight_gaussians" and noise > 0:
        angle = (math.pi / 4) * np.arange(8)
        centers = EIGHT_GAUSSIANS_RADIUS * np.stack([np.cos(angle), np.sin(angle)], axis=1)

        def log_p1(x):
            x = np.atleast_2d(x)
            sq = np.sum((x[:, None, :] - centers[None]) ** 2, axis=2)
            comp = -0.5 * sq / noise**2 - 2 * math.log(noise) - math.log(2 * math.pi)
            return logsumexp(comp, axis=1) - math.log(8)

        problem.oracle_log_p1 = log_p1
        problem.oracle_log_ratio = lambda x: log_p1(x) - standard_normal_log_pdf(x)
    return problem


def make_problem(name: str, **kw) -> BenchmarkProblem:
    """Build a problem from its config name and keyword parameters."""
    if name == "gaussian_ratio":
        return make_gaussian_ratio(kw.get("dim", 1), kw.get("mean1"), kw.get("cov1_diag"))
    if name == "blockwise_gaussian_mi":
        return make_blockwise_gaussian_mi(kw.get("dim", 8), kw.get("target_mi", 2.0))
    if name in PATHOLOGICAL:
        default = 0.45 if name == "additive_noise" else 0.9
        return make_pathological_mi(name, kw.get("param", default))
    if name in SHAPES:
        return make_2d_shapes(name, kw.get("noise"))
    raise ValueError(f"unknown problem {name!r}")


def score_mse(estimates, oracle) -> float:
    estimates, oracle = np.asarray(estimates, dtype=np.float64), np.asarray(oracle, dtype=np.float64)
    if estimates.size == 0 or estimates.shape != oracle.shape:
        raise ValueError("need nonempty arrays of matching shape")
    return float(np.mean((estimates - oracle) ** 2))


def score_nll(log_densities) -> float:
    log_densities = np.asarray(log_densities, dtype=np.float64)
    if log_densities.size == 0:
        raise ValueError("need at least one log-density")
    return float(-np.mean(log_densities))


def grid_lattice(extent: float = 4.0, resolution: int = 101):
    axis = np.linspace(-extent, extent, resolution)
    xx, yy = np.meshgrid(axis, axis, indexing="xy")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def write_grid_dump(path, points, log_density) -> None:
    """CSV with header ``x,y,log_density``, one lattice point per row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "log_density"])
        for (x, y), v in zip(points, log_density):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
