"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Training-based criteria reuse the preset configurations behind ``isadre bench``.
Wall-clock budgets are part of each verdict.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from isadre import presets
from isadre.experiment import evaluate, run_train
from isadre.verify import (
    check_autodiff,
    check_boundary_probe,
    check_cia_stability,
    check_eta_marginal,
    check_sai_consistency,
    check_secant_variance,
    check_time_score,
    final_training_loss,
)

pytestmark = pytest.mark.acceptance


def report(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def train_and_eval(config, out_dir):
    state, seconds = timed(run_train, config, out_dir)
    rows = evaluate(config, state.net, out_dir=out_dir)
    return state, rows, seconds


def by_nfe(rows, metric):
    return {int(r["NFE"]): float(r["value"]) for r in rows if r["metric"] == metric}


@pytest.fixture(scope="module")
def gaussian_run(tmp_path_factory):
    config = presets.gaussian_1d()[0]
    state, rows, seconds = train_and_eval(config, tmp_path_factory.mktemp("gaussian_1d"))
    return config, state, rows, seconds


def test_autodiff():
    res, seconds = timed(check_autodiff, 100)
    ok = res.passed and seconds < 10
    report(1, "autodiff vs finite differences", ok, f"{res.detail} worst={res.value:.2e} time={seconds:.1f}s")
    assert ok


def test_time_score():
    res, seconds = timed(check_time_score, 1000)
    ok = res.passed and seconds < 5
    report(2, "conditional time score", ok, f"max_abs_err={res.value:.2e} time={seconds:.1f}s")
    assert ok


def test_eta_marginal():
    results = check_eta_marginal(100_000)
    ok = all(r.passed for r in results)
    detail = " ".join(f"{r.name}={r.value:.4f}" for r in results)
    report(3, "eta marginal law (KS < 0.01)", ok, detail)
    assert ok


def test_secant_variance():
    results = check_secant_variance(20_000, 500)
    ok = all(r.passed for r in results)
    detail = " ".join(f"{r.name}={r.value:.4g}" for r in results)
    report(4, "Var(U) <= Var(S)", ok, detail)
    assert ok


def test_gaussian_ratio_recovery(gaussian_run):
    config, state, rows, seconds = gaussian_run
    mse = by_nfe(rows, "mse")
    ok = mse[1] < 0.02 and all(mse[k] < 0.03 for k in (1, 2, 5, 10)) and seconds <= 300
    detail = " ".join(f"mse@K={k}={v:.4f}" for k, v in sorted(mse.items())) + f" train_time={seconds:.0f}s"
    report(5, "1D Gaussian log-ratio", ok, detail)
    assert ok


def test_blockwise_mi(tmp_path):
    secant_cfg, tangent_cfg = presets.mi_blockwise()
    t0 = time.perf_counter()
    _, s_rows, _ = train_and_eval(secant_cfg, tmp_path / "secant")
    _, t_rows, _ = train_and_eval(tangent_cfg, tmp_path / "tangent")
    seconds = time.perf_counter() - t0
    s_err, t_err = by_nfe(s_rows, "mi_abs_error"), by_nfe(t_rows, "mi_abs_error")
    ok = all(s_err[k] < 0.3 for k in (1, 2, 10)) and t_err[2] > s_err[2] and seconds < 1200
    detail = (" ".join(f"isa_err@{k}={v:.3f}" for k, v in sorted(s_err.items()))
              + f" tangent_err@2={t_err[2]:.3f} time={seconds:.0f}s")
    report(6, "blockwise MI d=8", ok, detail)
    assert ok


def test_pathological_mi(tmp_path):
    errs = {}
    for cfg in presets.pathological():
        _, rows, _ = train_and_eval(cfg, tmp_path / cfg.name)
        errs[cfg.problem.name] = max(by_nfe(rows, "mi_abs_error").values())
    ok = all(v <= 0.15 for v in errs.values())
    report(7, "pathological MI within 0.15", ok, " ".join(f"{k}_worst_err={v:.3f}" for k, v in errs.items()))
    assert ok


def test_cia_stability():
    res = check_cia_stability(400)
    ok = res.passed and "ratio_full_interval=" in res.line() and "ratio_cia=" in res.line()
    report(8, "CIA stability", ok, res.detail)
    assert ok


def test_consistency_residual(gaussian_run):
    config, state, _, _ = gaussian_run
    tcfg, problem = config.train_config(), config.problem.build()
    sai = check_sai_consistency(tcfg, problem, state.net, final_training_loss(state.loss_history))
    probe = check_boundary_probe(state.net, np.linspace(-2.0, 3.0, 201)[:, None])
    ok = sai.passed and probe.passed
    report(9, "consistency residual", ok,
           f"held_out={sai.value:.4g} limit={sai.threshold:.4g} monotone_fraction={probe.value:.3f}")
    assert ok


def test_density_2d(tmp_path):
    secant_cfg, tangent_cfg = presets.shapes_2d()
    t0 = time.perf_counter()
    _, s_rows, _ = train_and_eval(secant_cfg, tmp_path / "secant")
    _, t_rows, _ = train_and_eval(tangent_cfg, tmp_path / "tangent")
    seconds = time.perf_counter() - t0
    s_nll, t_nll = by_nfe(s_rows, "nll")[2], by_nfe(t_rows, "nll")[2]
    dump = tmp_path / "secant" / "grid_secant_nfe2.csv"
    problem = secant_cfg.problem.build()
    oracle_nll = -float(np.mean(problem.oracle_log_p1(problem.sample_p1(np.random.default_rng(11), 100_000))))
    ok = s_nll < t_nll and dump.exists() and seconds < 900
    report(10, "eight_gaussians NLL at NFE=2", ok,
           f"isa_nll={s_nll:.4f} tangent_nll={t_nll:.4f} true_nll={oracle_nll:.4f} "
           f"grid_dump={dump.exists()} time={seconds:.0f}s")
    assert ok
