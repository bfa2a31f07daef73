"""Secant-alignment training loop and the time-score-matching tangent baseline."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .benchmarks import BenchmarkProblem
from .interpolants import (
    InterpolantSpec,
    conditional_law,
    conditional_time_score,
    sample_xt,
    velocity,
)
from .mlp import AdamConfig, OptimizerState, ParamVector, SecantNet, adam_step
from .time_sampling import (
    ImportanceGrid,
    TimePairPolicy,
    TimeSampler,
    build_importance_grid,
    sample_pairs,
)

log = logging.getLogger(__name__)

JVP_DIRECTIONS = ("time", "velocity")
WEIGHTINGS = ("auto", "variance", "none")
MAX_DROP_FRACTION = 0.10


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 512
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    seed: int = 0
    hidden_widths: list[int] = field(default_factory=lambda: [128, 128, 128])
    n_freq: int = 4
    interpolant: InterpolantSpec = field(default_factory=InterpolantSpec)
    sampler: str = "variance_importance"
    ln_mean: float = -0.4
    ln_std: float = 1.0
    supervision: str = "cia"
    rho: float = 0.0
    d0: float = 0.01
    anneal_fraction: float = 0.5
    grid_size: int = 64
    grid_samples: int = 2048
    # added to the estimated variance before inversion; larger values flatten the grid
    var_floor: float = 1e-6
    # "auto": lambda(t) enters through the sampling density when the sampler is
    # variance_importance, and as a per-sample weight otherwise
    weighting: str = "auto"
    # "time" differentiates u along (0, 0, 1); "velocity" along (dx_t/dt, 0, 1)
    jvp_direction: str = "time"
    # cosine decay from lr to lr * lr_final_fraction over the run
    lr_schedule: str = "cosine"
    lr_final_fraction: float = 0.01
    loss_log_every: int = 10

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.jvp_direction not in JVP_DIRECTIONS:
            raise ValueError(f"jvp_direction must be one of {JVP_DIRECTIONS}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")

    @property
    def applies_weights(self) -> bool:
        if self.weighting == "auto":
            return self.sampler != "variance_importance"
        return self.weighting == "variance"

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.lr, self.beta1, self.beta2, self.eps_opt)

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant" or self.steps <= 1:
            return self.lr
        frac = min(1.0, step / (self.steps - 1))
        floor = self.lr * self.lr_final_fraction
        return floor + 0.5 * (self.lr - floor) * (1.0 + math.cos(math.pi * frac))


@dataclass
class TrainState:
    opt: OptimizerState
    grid: Optional[ImportanceGrid]
    policy: TimePairPolicy
    total_steps: int
    dropped: int = 0
    metrics: list[dict] = field(default_factory=list)

    @property
    def net(self) -> SecantNet:
        return self.opt.net

    @property
    def step(self) -> int:
        return self.opt.step

    @property
    def loss_history(self):
        return self.opt.loss_history


@dataclass
class BatchLoss:
    loss: float
    upstream: np.ndarray
    grads: ParamVector
    dropped: int
    target: np.ndarray
    prediction: np.ndarray


def _weights(grid: Optional[ImportanceGrid], t):
    return np.ones_like(t) if grid is None else grid.weight_at(t)


def _targets(spec: InterpolantSpec, x0, x1, z, t):
    xt = sample_xt(spec, x0, x1, t, z)
    target = conditional_time_score(conditional_law(spec, x0, x1, t), xt)
    return xt, np.atleast_1d(target)


def csa_loss_batch(net: SecantNet, x0, x1, z, l, t, spec: InterpolantSpec,
                   grid: Optional[ImportanceGrid] = None, jvp_direction: str = "time",
                   correction_offset: float = 0.0) -> BatchLoss:
    """Weighted squared error between the conditional time score and u + sg((t - l) du/dt).

    ``upstream`` is d loss / d u per sample; the correction term is a constant
    for the gradient. ``correction_offset`` is added inside the stop-gradient
    and exists for testing that contract.
    """
    l = np.asarray(l, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    xt, target = _targets(spec, x0, x1, z, t)
    keep = np.isfinite(target)
    dropped = int((~keep).sum())
    if dropped:
        xt, target, l, t = xt[keep], target[keep], l[keep], t[keep]
        x0, x1, z = np.atleast_2d(x0)[keep], np.atleast_2d(x1)[keep], np.atleast_2d(z)[keep]
    n = target.shape[0]
    if jvp_direction == "velocity":
        dx = np.atleast_2d(velocity(spec, x0, x1, t, z))
    else:
        dx = np.zeros_like(xt)
    u, du, acts = net.forward_jvp(xt, (l, t), (dx, np.zeros(n), np.ones(n)))
    correction = (t - l) * du + correction_offset
    pred = u + correction
    w = _weights(grid, t)
    resid = target - pred
    loss = float(np.mean(w * resid * resid)) if n else float("nan")
    upstream = -2.0 * w * resid / max(n, 1)
    grads = net.grad_from_cache(acts, upstream)
    return BatchLoss(loss, upstream, grads, dropped, target, pred)


def ctsm_loss_batch(net: SecantNet, x0, x1, z, t, spec: InterpolantSpec,
                    grid: Optional[ImportanceGrid] = None) -> BatchLoss:
    """Weighted squared error between the conditional time score and s(x_t, t)."""
    t = np.asarray(t, dtype=np.float64)
    xt, target = _targets(spec, x0, x1, z, t)
    keep = np.isfinite(target)
    dropped = int((~keep).sum())
    if dropped:
        xt, target, t = xt[keep], target[keep], t[keep]
    n = target.shape[0]
    pred, acts = net.forward_cached(xt, (t,))
    w = _weights(grid, t)
    resid = target - pred
    loss = float(np.mean(w * resid * resid)) if n else float("nan")
    upstream = -2.0 * w * resid / max(n, 1)
    grads = net.grad_from_cache(acts, upstream)
    return BatchLoss(loss, upstream, grads, dropped, target, pred)


def _seed_stream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed, *tags])


def _check_problem(config: TrainConfig, problem: BenchmarkProblem):
    if config.interpolant.kind == "DI" and not problem.p0_standard_normal:
        raise ValueError(f"{problem.name}: DI conditional law needs p0 = N(0, I); use DDBI")


def make_policy(config: TrainConfig, grid: Optional[ImportanceGrid]) -> TimePairPolicy:
    lo, hi = config.interpolant.time_range
    sampler = TimeSampler(config.sampler, config.ln_mean, config.ln_std,
                          grid if config.sampler == "variance_importance" else None, lo, hi)
    return TimePairPolicy(sampler, config.supervision, config.rho, config.d0, config.anneal_fraction)


def build_grid(config: TrainConfig, problem: BenchmarkProblem) -> Optional[ImportanceGrid]:
    if not config.applies_weights and config.sampler != "variance_importance":
        return None
    return build_importance_grid(config.interpolant, problem, config.grid_size, config.grid_samples,
                                 _seed_stream(config.seed, 1), var_floor=config.var_floor)


def init_state(config: TrainConfig, problem: BenchmarkProblem, n_times: int = 2) -> TrainState:
    _check_problem(config, problem)
    net = SecantNet.init(problem.dim, config.hidden_widths, config.n_freq, n_times,
                         rng=_seed_stream(config.seed, 0))
    grid = build_grid(config, problem)
    return TrainState(OptimizerState.fresh(net), grid, make_policy(config, grid), config.steps)


def resume_state(config: TrainConfig, problem: BenchmarkProblem, opt: OptimizerState) -> TrainState:
    """Rebuild a training state around a loaded optimizer state; grid and policy are re-derived from the seed."""
    _check_problem(config, problem)
    if opt.net.dim != problem.dim:
        raise ValueError(f"checkpoint dim {opt.net.dim} does not match problem dim {problem.dim}")
    grid = build_grid(config, problem)
    return TrainState(opt, grid, make_policy(config, grid), config.steps)


def _draw_batch(config: TrainConfig, problem: BenchmarkProblem, state: TrainState, step: int,
                pairs: bool = True):
    rng = _seed_stream(config.seed, 2, step)
    n = config.batch_size
    if pairs:
        l, t, _ = sample_pairs(state.policy, rng, step, state.total_steps, n)
    else:
        t = state.policy.sampler.draw(rng, n)
        l = t
    x0 = problem.sample_p0(rng, n)
    x1 = problem.sample_p1(rng, n)
    z = rng.standard_normal(x0.shape)
    return x0, x1, z, l, t


def _record(state, step, loss, d_max, dropped, every, writer):
    row = {"step": step, "loss": loss, "d_max": d_max, "dropped": dropped}
    if step % every == 0:
        state.metrics.append(row)
        if writer is not None:
            writer.writerow([step, repr(loss), repr(d_max), dropped])


def _run(config: TrainConfig, problem: BenchmarkProblem, state: TrainState, loss_fn,
         metrics_path=None, pairs: bool = True, stop_at: Optional[int] = None) -> TrainState:
    weight_grid = state.grid if config.applies_weights else None
    fh = writer = None
    if metrics_path is not None:
        metrics_path = Path(metrics_path)
        metrics_path.parent.mkdir(parents=True, exist_ok=True)
        fresh = state.step == 0 or not metrics_path.exists()
        fh = open(metrics_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(["step", "loss", "d_max", "dropped"])
    try:
        end = state.total_steps if stop_at is None else min(stop_at, state.total_steps)
        while state.opt.step < end:
            step = state.opt.step
            x0, x1, z, l, t = _draw_batch(config, problem, state, step, pairs)
            res = loss_fn(state.net, x0, x1, z, l, t, weight_grid)
            if res.dropped > MAX_DROP_FRACTION * config.batch_size:
                raise TrainingAborted(
                    f"step {step}: dropped {res.dropped}/{config.batch_size} samples with "
                    "non-finite targets; check the interpolant configuration"
                )
            state.dropped += res.dropped
            d_max = state.policy.d_max(step, state.total_steps)
            state.opt.loss_history.append((step, res.loss))
            _record(state, step, res.loss, d_max, res.dropped, config.loss_log_every, writer)
            adam = config.adam
            adam.lr = config.lr_at(step)
            if not adam_step(state.opt, res.grads, adam):
                log.warning("step %d: non-finite gradient, update skipped", step)
                state.opt.step += 1
    finally:
        if fh is not None:
            fh.close()
    return state


def train(config: TrainConfig, problem: BenchmarkProblem, state: Optional[TrainState] = None,
          metrics_path=None, stop_at: Optional[int] = None) -> TrainState:
    """Train the secant model u(x, l, t) with the CSA objective.

    ``stop_at`` pauses the loop early without changing the schedule horizon,
    so a later call with the returned (or checkpointed) state continues the
    same trajectory.
    """
    state = init_state(config, problem, n_times=2) if state is None else state

    def loss_fn(net, x0, x1, z, l, t, grid):
        return csa_loss_batch(net, x0, x1, z, l, t, config.interpolant, grid, config.jvp_direction)

    return _run(config, problem, state, loss_fn, metrics_path, stop_at=stop_at)


def train_tangent_baseline(config: TrainConfig, problem: BenchmarkProblem,
                           state: Optional[TrainState] = None, metrics_path=None,
                           stop_at: Optional[int] = None) -> TrainState:
    """Train s(x, t) with conditional time score matching; t is drawn directly from the sampler."""
    state = init_state(config, problem, n_times=1) if state is None else state

    def loss_fn(net, x0, x1, z, l, t, grid):
        return ctsm_loss_batch(net, x0, x1, z, t, config.interpolant, grid)

    return _run(config, problem, state, loss_fn, metrics_path, pairs=False, stop_at=stop_at)
