"""Log-ratio, density and mutual-information estimators built on trained networks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .mlp import SecantNet


@dataclass(frozen=True)
class Partition:
    knots: tuple[float, ...]

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=np.float64)
        if k.size < 2 or k[0] != 0.0 or k[-1] != 1.0 or np.any(np.diff(k) <= 0):
            raise ValueError("partition must be strictly increasing from 0 to 1 with K >= 1 intervals")

    @classmethod
    def uniform(cls, K: int) -> "Partition":
        if K < 1:
            raise ValueError("K must be >= 1")
        knots = np.linspace(0.0, 1.0, K + 1)
        knots[0], knots[-1] = 0.0, 1.0
        return cls(tuple(float(v) for v in knots))

    @property
    def K(self) -> int:
        return len(self.knots) - 1


def _as_partition(partition) -> Partition:
    if isinstance(partition, Partition):
        return partition
    if isinstance(partition, (int, np.integer)):
        return Partition.uniform(int(partition))
    return Partition(tuple(float(v) for v in partition))


def log_ratio_secant(net: SecantNet, x, partition=1):
    """sum_k (t_{k+1} - t_k) u(x, t_k, t_{k+1}) with x held fixed; K network calls."""
    part = _as_partition(partition)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    total = np.zeros(xb.shape[0])
    knots = part.knots
    for a, b in zip(knots[:-1], knots[1:]):
        total += (b - a) * net.forward(xb, a, b)
    return float(total[0]) if single else total


def log_ratio_tangent_quadrature(net_tangent, x, K: int):
    """Trapezoidal estimate of int_0^1 s(x, tau) dtau on ``K`` uniform knots (NFE = K)."""
    if K < 2:
        raise ValueError("trapezoidal rule needs K >= 2 knots")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    taus = np.linspace(0.0, 1.0, K)
    vals = np.stack([np.broadcast_to(_tangent_eval(net_tangent, xb, tau), (xb.shape[0],)) for tau in taus])
    est = integrate.trapezoid(vals, taus, axis=0)
    return float(est[0]) if single else est


def _tangent_eval(net_tangent, xb, tau):
    if isinstance(net_tangent, SecantNet):
        return net_tangent.forward(xb, tau)
    return np.asarray(net_tangent(xb, tau), dtype=np.float64)


def log_density(net: SecantNet, x, base_log_pdf, partition=1):
    return log_ratio_secant(net, x, partition) + base_log_pdf(x)


def estimate_mi(net: SecantNet, joint_samples, partition=1) -> tuple[float, float]:
    """Mean log-ratio over joint samples and its standard error."""
    joint_samples = np.atleast_2d(np.asarray(joint_samples, dtype=np.float64))
    if joint_samples.shape[0] == 0:
        raise ValueError("no joint samples")
    vals = log_ratio_secant(net, joint_samples, partition)
    return mean_and_stderr(vals)


def estimate_mi_tangent(net_tangent, joint_samples, K: int) -> tuple[float, float]:
    joint_samples = np.atleast_2d(np.asarray(joint_samples, dtype=np.float64))
    if joint_samples.shape[0] == 0:
        raise ValueError("no joint samples")
    return mean_and_stderr(log_ratio_tangent_quadrature(net_tangent, joint_samples, K))


def mean_and_stderr(values) -> tuple[float, float]:
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    n = values.size
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return float(values.mean()), se


# -- analytic secants, used as oracles ---------------------------------------


def quadrature_secant(tangent, l: float, t: float, **quad_kw) -> float:
    """(1 / (t - l)) int_l^t tangent(tau) dtau by adaptive quadrature; tangent(l) when l == t."""
    if t == l:
        return float(tangent(l))
    opts = {"epsabs": 1e-13, "epsrel": 1e-12, "limit": 200}
    opts.update(quad_kw)
    val, _ = integrate.quad(tangent, l, t, **opts)
    return val / (t - l)


def gauss_legendre_secant(tangent, l, t, order: int = 64):
    """Vectorised (1 / (t - l)) int_l^t tangent(tau) dtau with a fixed Gauss-Legendre rule.

    ``tangent`` maps an array of times (shape ``(n, order)``) to values of the
    same shape; ``l`` and ``t`` broadcast to ``(n,)``. Where ``l == t`` the rule
    collapses onto ``tangent(l)``.
    """
    nodes, weights = np.polynomial.legendre.leggauss(order)
    l, t = np.broadcast_arrays(np.atleast_1d(np.asarray(l, dtype=np.float64)),
                               np.atleast_1d(np.asarray(t, dtype=np.float64)))
    mid, half = 0.5 * (l + t), 0.5 * (t - l)
    taus = mid[:, None] + half[:, None] * nodes[None, :]
    return 0.5 * np.asarray(tangent(taus)) @ weights


def sai_residual(net: SecantNet, x, l, t, tangent_target, direction_x=None):
    """|target - u - (t - l) du/dt| per sample (x held fixed unless ``direction_x`` is given)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    l = np.broadcast_to(np.asarray(l, dtype=np.float64), (n,))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    dx = np.zeros_like(x) if direction_x is None else np.atleast_2d(direction_x)
    u, du, _ = net.forward_jvp(x, (l, t), (dx, np.zeros(n), np.ones(n)))
    return np.abs(np.asarray(tangent_target) - u - (t - l) * du)
