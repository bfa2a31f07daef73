"""Property battery run by ``isadre verify``: each check returns a measured value and a verdict."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .benchmarks import (
    gaussian_path_tangent,
    make_blockwise_gaussian_mi,
    make_gaussian_ratio,
)
from .inference import gauss_legendre_secant
from .interpolants import (
    InterpolantSpec,
    Schedule,
    conditional_law,
    conditional_time_score,
    gaussian_log_density,
)
from .mlp import SecantNet
from .time_sampling import (
    TimePairPolicy,
    TimeSampler,
    build_importance_grid,
    eta_marginal_check,
    grid_from_variances,
    sample_pairs,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    extra: dict = field(default_factory=dict)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        tail = f"  {self.detail}" if self.detail else ""
        return f"[{verdict}] {self.name}: value={self.value:.6g} threshold={self.threshold:.6g}{tail}"


def _rel(a, b, floor):
    return abs(a - b) / max(abs(a), abs(b), floor)


def _random_net(rng, dim, widths, n_freq, n_times):
    net = SecantNet.init(dim, widths, n_freq, n_times, rng=rng)
    net.params.values[:] = rng.normal(size=net.params.values.size) / math.sqrt(max(widths))
    return net


def check_autodiff(n_nets: int = 100, seed: int = 0, h: float = 1e-5, tol: float = 1e-4,
                   jvp_fn: Optional[Callable] = None) -> CheckResult:
    """Central differences against parameter gradients and input JVPs on random nets.

    Gradients are compared as vectors (relative L2 error per net); each JVP is
    compared as a scalar with a floor of 1e-3 on the denominator. ``jvp_fn``
    replaces ``net.jvp`` for negative-control runs.
    """
    rng = np.random.default_rng([seed, 101])
    jvp_fn = jvp_fn or (lambda net, x, l, t, d: net.jvp(x, l, t, direction=d))
    worst_grad = worst_jvp = 0.0
    for _ in range(n_nets):
        dim = int(rng.integers(1, 4))
        widths = [int(w) for w in rng.integers(3, 7, size=int(rng.integers(1, 3)))]
        net = _random_net(rng, dim, widths, int(rng.integers(0, 3)), 2)
        x = rng.normal(size=(1, dim))
        l, t = np.sort(rng.random(2))
        lv, tv = np.array([l]), np.array([t])
        up = rng.normal(size=1)

        g = net.grad_params(x, lv, tv, upstream=up).values
        base = net.params.values.copy()
        fd = np.empty_like(base)
        for i in range(base.size):
            net.params.values[i] = base[i] + h
            fp = net.forward(x, lv, tv)[0]
            net.params.values[i] = base[i] - h
            fm = net.forward(x, lv, tv)[0]
            net.params.values[i] = base[i]
            fd[i] = up[0] * (fp - fm) / (2 * h)
        worst_grad = max(worst_grad, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))

        direction = (rng.normal(size=dim), float(rng.normal()), float(rng.normal()))
        exact = float(jvp_fn(net, x[0], l, t, direction))
        dx, dl, dt = direction
        fp = net.forward(x[0] + h * dx, l + h * dl, t + h * dt)
        fm = net.forward(x[0] - h * dx, l - h * dl, t - h * dt)
        worst_jvp = max(worst_jvp, _rel(exact, (fp - fm) / (2 * h), 1e-3))
    worst = max(worst_grad, worst_jvp)
    return CheckResult("autodiff_finite_difference", worst < tol, worst, tol,
                       f"nets={n_nets} grad_rel={worst_grad:.2e} jvp_rel={worst_jvp:.2e}")


def check_time_score(n_configs: int = 1000, seed: int = 0, h: float = 1e-4, tol: float = 1e-6) -> CheckResult:
    """Analytic conditional time score against a five-point difference of the log density."""
    rng = np.random.default_rng([seed, 102])
    worst = 0.0
    for i in range(n_configs):
        spec = InterpolantSpec(Schedule(("linear", "variance_preserving")[(i // 2) % 2]), ("DI", "DDBI")[i % 2],
                               gamma=rng.uniform(0.2, 1.5), eps=rng.uniform(1e-3, 0.1))
        d = int(rng.integers(1, 5))
        x0, x1, x = rng.normal(size=(1, d)), rng.normal(size=(1, d)), rng.normal(size=(1, d))
        t = rng.uniform(0.05, 0.9)

        def logp(s):
            law = conditional_law(spec, x0, x1, s)
            return gaussian_log_density(x, law.mean, law.std)[0]

        fd = (-logp(t + 2 * h) + 8 * logp(t + h) - 8 * logp(t - h) + logp(t - 2 * h)) / (12 * h)
        exact = conditional_time_score(conditional_law(spec, x0, x1, t), x)[0]
        worst = max(worst, abs(exact - fd))
    return CheckResult("time_score_finite_difference", worst < tol, worst, tol, f"configs={n_configs}")


def reference_grid(seed: int = 0) -> "ImportanceGrid":
    """Variance-importance grid of the 1D Gaussian ratio problem under DI linear."""
    return build_importance_grid(InterpolantSpec(kind="DI"), make_gaussian_ratio(1, [1.0], [1.0]),
                                 G=64, N=2048, rng=np.random.default_rng([seed, 103]))


def reference_samplers(seed: int = 0) -> list[TimeSampler]:
    return [TimeSampler("uniform"), TimeSampler("logit_normal", m=-0.4, s=1.0),
            TimeSampler("variance_importance", grid=reference_grid(seed))]


def check_eta_marginal(n: int = 100_000, seed: int = 0, tol: float = 0.01) -> list[CheckResult]:
    """KS distance between eta ~ U[l, t] over sampled pairs and direct sampler draws."""
    out = []
    for i, sampler in enumerate(reference_samplers(seed)):
        ks = eta_marginal_check(sampler, np.random.default_rng([seed, 104, i]), n)
        out.append(CheckResult(f"eta_marginal[{sampler.kind}]", ks < tol, ks, tol, f"n={n}"))
    return out


def _bootstrap_lower(u, s, n_boot, rng, alpha=0.01):
    """One-sided lower confidence bound of Var(S) - Var(U) from paired resampling."""
    n = u.size
    idx = rng.integers(0, n, size=(n_boot, n))
    diffs = s[idx].var(axis=1) - u[idx].var(axis=1)
    return float(np.quantile(diffs, alpha))


def secant_variance_samples(tangent, sampler: TimeSampler, rng, n: int):
    """Draw (l, t) and eta ~ U[l, t]; return (U, S) = (quadrature secant, tangent at eta)."""
    policy = TimePairPolicy(sampler, "fixed", rho=0.0)
    l, t, _ = sample_pairs(policy, rng, 0, 1, n)
    u = gauss_legendre_secant(tangent, l, t)
    eta = l + (t - l) * rng.random(n)
    return u, np.asarray(tangent(eta), dtype=np.float64)


def check_secant_variance(n: int = 20_000, n_boot: int = 500, seed: int = 0, xs=(-1.0, 0.5, 2.0),
                          strict_ratio: float = 0.9) -> list[CheckResult]:
    """Var(U) <= Var(S) with a one-sided 99% bootstrap bound, plus the strict ratio on a varying tangent.

    The tangent is the fixed-x time derivative of log p_tau along the linear path
    from N(0, 1) to N(1, 1); a constant tangent serves as the equality case.
    """
    out = []
    for i, sampler in enumerate(reference_samplers(seed)):
        rng = np.random.default_rng([seed, 105, i])
        lows, ratios = [], []
        for x in xs:
            u, s = secant_variance_samples(lambda tau: gaussian_path_tangent(x, tau), sampler, rng, n)
            lows.append(_bootstrap_lower(u, s, n_boot, rng))
            ratios.append(u.var() / s.var())
        u, s = secant_variance_samples(lambda tau: np.full_like(tau, 0.7), sampler, rng, n)
        lows.append(_bootstrap_lower(u, s, n_boot, rng))
        low = min(lows)
        out.append(CheckResult(f"secant_variance_bound[{sampler.kind}]", low >= -1e-12, low, 0.0,
                               "lower 99% bound of Var(S) - Var(U)"))
        worst = max(ratios)
        out.append(CheckResult(f"secant_variance_strict[{sampler.kind}]", worst < strict_ratio, worst,
                               strict_ratio, "max Var(U)/Var(S) over probe points"))
    return out


def check_secant_additivity(n: int = 200, seed: int = 0, tol: float = 1e-8) -> CheckResult:
    rng = np.random.default_rng([seed, 106])
    worst = 0.0
    for _ in range(n):
        x = rng.normal(scale=2.0)
        l, m, t = np.sort(rng.random(3))

        def tangent(tau):
            return gaussian_path_tangent(x, tau)

        whole = (t - l) * gauss_legendre_secant(tangent, l, t)[0]
        parts = (m - l) * gauss_legendre_secant(tangent, l, m)[0] + (t - m) * gauss_legendre_secant(tangent, m, t)[0]
        worst = max(worst, abs(whole - parts))
    return CheckResult("secant_additivity", worst < tol, worst, tol, f"intervals={n}")


def check_lipschitz(seed: int = 0, omega: float = 5.0, amp: float = 1.3) -> CheckResult:
    """Difference quotients of t -> u(l, t) for amp*sin(omega*tau) stay below amp*omega/2."""
    rng = np.random.default_rng([seed, 107])
    bound = amp * omega / 2
    worst = 0.0

    def tangent(tau):
        return amp * np.sin(omega * tau)

    for l in rng.random(20) * 0.5:
        ts = np.linspace(l + 1e-3, 1.0, 400)
        u = gauss_legendre_secant(tangent, np.full_like(ts, l), ts)
        worst = max(worst, float(np.max(np.abs(np.diff(u) / np.diff(ts)))))
    return CheckResult("secant_lipschitz", worst <= bound + 1e-6, worst, bound + 1e-6)


def check_importance_grid(seed: int = 0) -> CheckResult:
    two = grid_from_variances([0.0, 1.0], [1.0, 4.0])
    flat = grid_from_variances(np.linspace(0, 1, 9), np.zeros(9))
    grid = reference_grid(seed)
    err = float(np.max(np.abs(two.probabilities - [0.8, 0.2])))
    ok = (err < 1e-6 and np.all(flat.weights == flat.weights[0]) and np.allclose(flat.density, 1.0)
          and np.all(grid.weights > 0) and np.all(np.isfinite(grid.weights))
          and np.all(np.diff(grid.cdf) > 0) and grid.cdf[-1] == 1.0)
    return CheckResult("importance_grid_sanity", bool(ok), err, 1e-6)


def loss_growth_ratio(loss_history) -> float:
    losses = np.array([v for _, v in loss_history], dtype=np.float64)
    return float(np.nanmax(losses) / losses[0])


def _monitor_batch(config, problem, grid, n: int, seed: int):
    """Fixed full-interval batch (d_max = 1) on which the objective is tracked without sampling noise."""
    from .training import make_policy

    policy = make_policy(config, grid)
    policy.supervision, policy.rho = "fixed", 0.0
    rng = np.random.default_rng([seed, 106])
    l, t, _ = sample_pairs(policy, rng, 0, 1, n)
    x0, x1 = problem.sample_p0(rng, n), problem.sample_p1(rng, n)
    return x0, x1, rng.standard_normal(x0.shape), l, t


def check_cia_stability(steps: int = 400, batch_size: int = 256, seed: int = 0,
                        limit: float = 2.0, monitor_every: int = 20, monitor_size: int = 8192) -> CheckResult:
    """max(loss) / loss(step 0) on the blockwise MI problem, CIA against full secants from step 0.

    The verdict uses the logged batch losses. A second ratio tracks the loss on
    one fixed monitoring batch, which separates model drift from batch noise.
    """
    from .training import TrainConfig, csa_loss_batch, init_state, train

    problem = make_blockwise_gaussian_mi(8, 2.0)
    ratios, monitored = {}, {}
    for name, kw in (("full_interval", {"supervision": "fixed", "rho": 0.0}), ("cia", {"supervision": "cia"})):
        cfg = TrainConfig(steps=steps, batch_size=batch_size, seed=seed, interpolant=InterpolantSpec(kind="DI"), **kw)
        state = init_state(cfg, problem)
        batch = _monitor_batch(cfg, problem, state.grid, monitor_size, seed)
        weight_grid = state.grid if cfg.applies_weights else None
        track = []
        for stop in range(0, steps + 1, monitor_every):
            state = train(cfg, problem, state=state, stop_at=stop)
            track.append(csa_loss_batch(state.net, *batch, cfg.interpolant, weight_grid).loss)
        ratios[name] = loss_growth_ratio(state.loss_history)
        monitored[name] = max(track) / track[0]
    detail = (f"ratio_cia={ratios['cia']:.4g} ratio_full_interval={ratios['full_interval']:.4g} "
              f"monitored_ratio_cia={monitored['cia']:.4g} monitored_ratio_full_interval={monitored['full_interval']:.4g}")
    return CheckResult("cia_stability", ratios["cia"] <= limit, ratios["cia"], limit, detail,
                       extra={**ratios, **{f"monitored_{k}": v for k, v in monitored.items()}})


def final_training_loss(loss_history, window: int = 100) -> float:
    """Mean of the last ``window`` batch losses; single batches are too noisy to compare against."""
    losses = np.array([v for _, v in loss_history[-window:]], dtype=np.float64)
    return float(np.nanmean(losses))


def check_sai_consistency(config, problem, net: SecantNet, final_loss: float, n_batches: int = 20,
                          seed: int = 99, factor: float = 3.0) -> CheckResult:
    """Held-out mean squared SAI residual, drawn and weighted as at the last training step."""
    from .training import build_grid, csa_loss_batch, make_policy

    grid = build_grid(config, problem)
    policy = make_policy(config, grid)
    weight_grid = grid if config.applies_weights else None
    rng = np.random.default_rng(seed)
    n, last = config.batch_size, max(config.steps, 1)
    vals = []
    for _ in range(n_batches):
        l, t, _ = sample_pairs(policy, rng, last, last, n)
        x0, x1 = problem.sample_p0(rng, n), problem.sample_p1(rng, n)
        z = rng.standard_normal(x0.shape)
        vals.append(csa_loss_batch(net, x0, x1, z, l, t, config.interpolant, weight_grid,
                                   config.jvp_direction).loss)
    held_out = float(np.mean(vals))
    limit = factor * final_loss
    return CheckResult("sai_residual_held_out", held_out <= limit, held_out, limit,
                       f"final_training_loss={final_loss:.6g}")


def check_boundary_probe(net: SecantNet, points, seed: int = 0, hs=(1e-2, 1e-3, 1e-4),
                         min_fraction: float = 0.95) -> CheckResult:
    """|u(x, t, t + h) - u(x, t, t)| must shrink as h does, for nearly every probe point."""
    rng = np.random.default_rng(seed)
    x = np.atleast_2d(points)
    n = x.shape[0]
    t = rng.uniform(0.0, 1.0 - max(hs), n)
    base = net.forward(x, t, t)
    gaps = np.stack([np.abs(net.forward(x, t, t + h) - base) for h in hs])
    mono = np.all(np.diff(gaps, axis=0) < 0, axis=0)
    frac = float(mono.mean())
    return CheckResult("boundary_probe_monotone", frac >= min_fraction, frac, min_fraction,
                       f"n_points={n}")


def run_battery(seed: int = 0, quick: bool = False) -> list[CheckResult]:
    results = [
        check_autodiff(20 if quick else 100, seed),
        check_time_score(200 if quick else 1000, seed),
    ]
    results += check_eta_marginal(20_000 if quick else 100_000, seed)
    results += check_secant_variance(5_000 if quick else 20_000, 200 if quick else 500, seed)
    results += [check_secant_additivity(seed=seed), check_lipschitz(seed), check_importance_grid(seed)]
    results.append(check_cia_stability(100 if quick else 400, seed=seed))
    return results


def format_report(results) -> str:
    lines = [r.line() for r in results]
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    return "\n".join(lines)
