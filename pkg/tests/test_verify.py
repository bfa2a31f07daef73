import numpy as np

from isadre.benchmarks import make_gaussian_ratio
from isadre.interpolants import InterpolantSpec
from isadre.mlp import SecantNet
from isadre.training import TrainConfig, train
from isadre.verify import (
    CheckResult,
    check_boundary_probe,
    check_sai_consistency,
    final_training_loss,
    format_report,
    loss_growth_ratio,
)


def test_check_line_format():
    line = CheckResult("x", False, 0.5, 0.25, "note").line()
    assert line == "[FAIL] x: value=0.5 threshold=0.25  note"
    text = format_report([CheckResult("a", True, 1, 2), CheckResult("b", False, 1, 2)])
    assert text.splitlines()[-1] == "1/2 checks passed"


def test_loss_helpers():
    hist = [(0, 2.0), (1, 5.0), (2, 1.0)]
    assert loss_growth_ratio(hist) == 2.5
    assert final_training_loss(hist, window=2) == 3.0


def test_boundary_probe_on_smooth_net(rng):
    net = SecantNet.init(1, [16, 16], 2, 2, rng=rng)
    net.params.values[:] = rng.normal(size=net.params.values.size) / 4
    res = check_boundary_probe(net, np.linspace(-2, 3, 50)[:, None])
    assert res.passed and res.value == 1.0


def test_boundary_probe_flags_interval_blind_net(rng):
    # zero output layer: u is constant, so the gaps never shrink
    net = SecantNet.init(1, [8], 1, 2, rng=rng)
    res = check_boundary_probe(net, np.linspace(-2, 3, 20)[:, None])
    assert not res.passed and res.value == 0.0


def test_sai_consistency_runs_on_short_training():
    problem = make_gaussian_ratio(1, [1.0], [1.0])
    cfg = TrainConfig(steps=30, batch_size=64, hidden_widths=[8, 8], n_freq=1, grid_size=8, grid_samples=200,
                      interpolant=InterpolantSpec(kind="DI"), loss_log_every=1)
    state = train(cfg, problem)
    res = check_sai_consistency(cfg, problem, state.net, final_training_loss(state.loss_history, 10), n_batches=5)
    assert np.isfinite(res.value) and res.threshold == 3 * final_training_loss(state.loss_history, 10)
    # an impossible budget must fail
    assert not check_sai_consistency(cfg, problem, state.net, 0.0, n_batches=2).passed
