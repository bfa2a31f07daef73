"""Train/evaluate runners shared by the command line and the preset suites."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .benchmarks import (
    BenchmarkProblem,
    grid_lattice,
    score_mse,
    score_nll,
    standard_normal_log_pdf,
    write_grid_dump,
)
from .config import ConfigError, ExperimentConfig, save_config
from .inference import (
    estimate_mi,
    estimate_mi_tangent,
    log_ratio_secant,
    log_ratio_tangent_quadrature,
    mean_and_stderr,
)
from .mlp import SecantNet, load_checkpoint, save_checkpoint
from .training import TrainState, resume_state, train, train_tangent_baseline

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("method", "sampler", "supervision", "NFE", "metric", "value", "stderr", "seed", "config_hash")
CHECKPOINT_NAME = "checkpoint.npz"
METRICS_NAME = "metrics.csv"
CONFIG_NAME = "config.yaml"
REPORT_NAME = "report.csv"


def run_train(config: ExperimentConfig, out_dir=None, resume_from=None) -> TrainState:
    """Train per ``config``; writes checkpoint, metrics CSV and the resolved config into ``out_dir``."""
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = config.problem.build()
    tcfg = config.train_config()
    fn = train if config.train.method == "secant" else train_tangent_baseline
    state = None
    if resume_from is not None:
        state = resume_state(tcfg, problem, load_checkpoint(resume_from))
        _check_net(config, problem, state.net)
    save_config(config, out / CONFIG_NAME)
    state = fn(tcfg, problem, state=state, metrics_path=out / METRICS_NAME)
    save_checkpoint(state.opt, out / CHECKPOINT_NAME)
    return state


def _check_net(config: ExperimentConfig, problem: BenchmarkProblem, net: SecantNet) -> None:
    if net.dim != problem.dim:
        raise ConfigError("problem", f"checkpoint has dim {net.dim} but the problem has dim {problem.dim}")
    want = 2 if config.train.method == "secant" else 1
    if net.n_times != want:
        raise ConfigError("train.method", f"checkpoint network takes {net.n_times} time inputs, "
                                          f"method {config.train.method!r} needs {want}")


def supervision_label(config: ExperimentConfig) -> str:
    if config.train.method == "tangent":
        return "tangent"
    s = config.supervision
    return "cia" if s.kind == "cia" else f"fixed(rho={s.rho:g})"


def _log_ratio(config: ExperimentConfig, net: SecantNet, x, K: int):
    if config.train.method == "secant":
        return log_ratio_secant(net, x, K)
    return log_ratio_tangent_quadrature(net, x, K)


def _mse_points(config: ExperimentConfig, problem: BenchmarkProblem, rng):
    e = config.eval
    if problem.dim == 1:
        return np.linspace(e.mse_lo, e.mse_hi, e.mse_points)[:, None]
    half = max(e.n_samples // 2, 1)
    return np.concatenate([problem.sample_p0(rng, half), problem.sample_p1(rng, half)])


def evaluate(config: ExperimentConfig, net: SecantNet, problem: Optional[BenchmarkProblem] = None,
             out_dir=None) -> list[dict]:
    """One report row per NFE (plus an absolute-error row for MI with a known oracle)."""
    problem = problem or config.problem.build()
    _check_net(config, problem, net)
    e = config.eval
    rng = np.random.default_rng([config.seed, 3])
    base = {
        "method": "isa-dre" if config.train.method == "secant" else "tangent-trapezoid",
        "sampler": config.sampler.kind,
        "supervision": supervision_label(config),
        "seed": config.seed,
        "config_hash": config.config_hash(),
    }
    if config.train.method == "tangent" and min(e.nfe) < 2:
        raise ConfigError("eval.nfe", "trapezoidal quadrature needs NFE >= 2")
    rows = []
    if e.metric == "mse":
        if problem.oracle_log_ratio is None:
            raise ConfigError("eval.metric", f"problem {problem.name} has no closed-form log-ratio")
        x = _mse_points(config, problem, rng)
        oracle = problem.oracle_log_ratio(x)
        for K in e.nfe:
            est = _log_ratio(config, net, x, K)
            _, se = mean_and_stderr((est - oracle) ** 2)
            rows.append({**base, "NFE": K, "metric": "mse", "value": score_mse(est, oracle), "stderr": se})
    elif e.metric == "mi":
        joint = problem.sample_p1(rng, e.n_samples)
        for K in e.nfe:
            if config.train.method == "secant":
                mi, se = estimate_mi(net, joint, K)
            else:
                mi, se = estimate_mi_tangent(net, joint, K)
            rows.append({**base, "NFE": K, "metric": "mi", "value": mi, "stderr": se})
            if problem.oracle_mi is not None:
                rows.append({**base, "NFE": K, "metric": "mi_abs_error", "value": abs(mi - problem.oracle_mi),
                             "stderr": se})
    else:
        if not problem.p0_standard_normal:
            raise ConfigError("eval.metric", "NLL needs a standard-normal base distribution")
        held_out = problem.sample_p1(rng, e.n_samples)
        for K in e.nfe:
            logp = _log_ratio(config, net, held_out, K) + standard_normal_log_pdf(held_out)
            _, se = mean_and_stderr(-logp)
            rows.append({**base, "NFE": K, "metric": "nll", "value": score_nll(logp), "stderr": se})
    if e.grid_dump and out_dir is not None:
        if problem.dim != 2:
            raise ConfigError("eval.grid_dump", "grid dumps are only defined for 2D problems")
        pts = grid_lattice(e.grid_extent, e.grid_resolution)
        for K in e.nfe:
            logp = _log_ratio(config, net, pts, K) + standard_normal_log_pdf(pts)
            write_grid_dump(Path(out_dir) / f"grid_{config.train.method}_nfe{K}.csv", pts, logp)
    return rows


def run_eval(config: ExperimentConfig, checkpoint, out_dir=None) -> list[dict]:
    out = Path(out_dir or config.output_dir)
    net = load_checkpoint(checkpoint).net
    rows = evaluate(config, net, out_dir=out)
    write_report(out / REPORT_NAME, rows)
    return rows


def write_report(path, rows, append: bool = False) -> None:
    """CSV with the fixed column order in ``REPORT_COLUMNS``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not (append and path.exists())
    with open(path, "w" if fresh else "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        if fresh:
            w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(row[k])) if k in ("value", "stderr") else row[k]) for k in REPORT_COLUMNS})


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
