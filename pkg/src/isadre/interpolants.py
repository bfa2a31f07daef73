"""Interpolation paths between p0 and p1 and their tractable conditional time scores.

Two paths are supported:

* ``DI``   x_t = a(t) x0 + b(t) x1
* ``DDBI`` x_t = a(t) x0 + b(t) x1 + sqrt(t(1-t) gamma^2 + (a^2 + b^2) eps) z

All functions accept a batch: ``x0, x1, z`` of shape ``(n, d)`` and ``t`` of
shape ``(n,)`` (or a scalar / single vectors).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEDULES = ("linear", "variance_preserving")
KINDS = ("DI", "DDBI")


class InterpolantDomainError(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.kind!r}; expected one of {SCHEDULES}")

    def alpha(self, t):
        t = np.asarray(t, dtype=np.float64)
        return 1.0 - t if self.kind == "linear" else np.cos(0.5 * np.pi * t)

    def beta(self, t):
        t = np.asarray(t, dtype=np.float64)
        return t.copy() if self.kind == "linear" else np.sin(0.5 * np.pi * t)

    def dalpha(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "linear":
            return -np.ones_like(t)
        return -0.5 * np.pi * np.sin(0.5 * np.pi * t)

    def dbeta(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "linear":
            return np.ones_like(t)
        return 0.5 * np.pi * np.cos(0.5 * np.pi * t)


@dataclass(frozen=True)
class InterpolantSpec:
    """Path configuration.

    ``std_floor`` clamps the DI conditional std away from zero near t = 1.
    ``delta`` trims the training time range: [delta, 1 - delta] for DDBI,
    where the velocity is singular at both endpoints, and [0, 1 - delta] for
    DI, whose conditional law degenerates at t = 1.
    """

    schedule: Schedule = Schedule()
    kind: str = "DI"
    gamma: float = 0.1
    eps: float = 1e-4
    std_floor: float = 1e-4
    delta: float = 1e-3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown interpolant {self.kind!r}; expected one of {KINDS}")
        if self.gamma < 0 or self.eps < 0:
            raise ValueError("gamma and eps must be nonnegative")
        if self.kind == "DDBI" and self.gamma == 0 and self.eps == 0:
            raise ValueError("DDBI needs gamma > 0 or eps > 0")

    @property
    def time_range(self) -> tuple[float, float]:
        if self.kind == "DDBI":
            return (self.delta, 1.0 - self.delta)
        return (0.0, 1.0 - self.delta)

    def bridge_std(self, t):
        """sigma(t) of the DDBI noise term and its time derivative."""
        t = np.asarray(t, dtype=np.float64)
        a, b = self.schedule.alpha(t), self.schedule.beta(t)
        da, db = self.schedule.dalpha(t), self.schedule.dbeta(t)
        var = t * (1.0 - t) * self.gamma**2 + (a * a + b * b) * self.eps
        std = np.sqrt(var)
        dvar = (1.0 - 2.0 * t) * self.gamma**2 + 2.0 * (a * da + b * db) * self.eps
        return std, dvar / (2.0 * std)


@dataclass
class ConditionalGaussian:
    """Isotropic Gaussian N(mean, std^2 I) with time derivatives of its parameters."""

    mean: np.ndarray
    std: np.ndarray
    dmean_dt: np.ndarray
    dstd_dt: np.ndarray


def _batch(x0, x1, t, z=None):
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (max(x0.shape[0], x1.shape[0]),))
    if z is not None:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return x0, x1, t, z


def _unbatch(out, like):
    return out[0] if np.asarray(like).ndim == 1 else out


def sample_xt(spec: InterpolantSpec, x0, x1, t, z=None):
    x0b, x1b, tb, zb = _batch(x0, x1, t, z)
    sched = spec.schedule
    xt = sched.alpha(tb)[:, None] * x0b + sched.beta(tb)[:, None] * x1b
    if spec.kind == "DDBI":
        std, _ = spec.bridge_std(tb)
        xt = xt + std[:, None] * zb
    return _unbatch(xt, x0)


def velocity(spec: InterpolantSpec, x0, x1, t, z=None):
    """d x_t / dt with the noise draw ``z`` held fixed.

    The DDBI noise coefficient is the exact derivative of sigma(t); with
    eps = 0 it equals gamma (1 - 2t) / (2 sqrt(t (1 - t))).
    """
    x0b, x1b, tb, zb = _batch(x0, x1, t, z)
    sched = spec.schedule
    v = sched.dalpha(tb)[:, None] * x0b + sched.dbeta(tb)[:, None] * x1b
    if spec.kind == "DDBI":
        if np.any((tb <= 0.0) | (tb >= 1.0)):
            raise InterpolantDomainError("DDBI velocity is singular at t = 0 and t = 1")
        _, dstd = spec.bridge_std(tb)
        v = v + dstd[:, None] * zb
    return _unbatch(v, x0)


def conditional_law(spec: InterpolantSpec, x0, x1, t) -> ConditionalGaussian:
    """Law of x_t given the conditioning variable (x1 for DI, (x0, x1) for DDBI).

    DI assumes p0 = N(0, I), so x_t | x1 = N(b x1, a^2 I).
    """
    x0b, x1b, tb, _ = _batch(x0, x1, t)
    sched = spec.schedule
    a, b = sched.alpha(tb), sched.beta(tb)
    da, db = sched.dalpha(tb), sched.dbeta(tb)
    if spec.kind == "DI":
        mean = b[:, None] * x1b
        dmean = db[:, None] * x1b
        std = np.abs(a)
        dstd = np.sign(a) * da
        clamped = std < spec.std_floor
        std = np.where(clamped, spec.std_floor, std)
        dstd = np.where(clamped, 0.0, dstd)
    else:
        mean = a[:, None] * x0b + b[:, None] * x1b
        dmean = da[:, None] * x0b + db[:, None] * x1b
        std, dstd = spec.bridge_std(tb)
    return ConditionalGaussian(mean, std, dmean, dstd)


def conditional_time_score(law: ConditionalGaussian, x, d: int | None = None):
    """d/dt log N(x; mean(t), std(t)^2 I) at fixed x.

    = -d std'/std + <x - mean, mean'>/std^2 + |x - mean|^2 std'/std^3
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    mean = np.atleast_2d(law.mean)
    dmean = np.atleast_2d(law.dmean_dt)
    std = np.asarray(law.std, dtype=np.float64)
    dstd = np.asarray(law.dstd_dt, dtype=np.float64)
    d = x.shape[1] if d is None else d
    r = x - mean
    out = (
        -d * dstd / std
        + np.sum(r * dmean, axis=1) / std**2
        + np.sum(r * r, axis=1) * dstd / std**3
    )
    return out if out.shape[0] > 1 or np.ndim(law.std) else out[0]


def gaussian_log_density(x, mean, std):
    """log N(x; mean, std^2 I), batched over rows."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    mean = np.atleast_2d(mean)
    std = np.asarray(std, dtype=np.float64)
    d = x.shape[1]
    r = x - mean
    return -0.5 * np.sum(r * r, axis=1) / std**2 - d * np.log(std) - 0.5 * d * np.log(2.0 * np.pi)
