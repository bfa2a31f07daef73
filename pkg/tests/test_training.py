import math

import numpy as np
import pytest

from isadre import training
from isadre.benchmarks import make_gaussian_ratio, make_pathological_mi
from isadre.interpolants import InterpolantSpec, conditional_law, conditional_time_score, sample_xt
from isadre.mlp import SecantNet, load_checkpoint, save_checkpoint
from isadre.training import (
    TrainConfig,
    TrainingAborted,
    csa_loss_batch,
    ctsm_loss_batch,
    init_state,
    resume_state,
    train,
    train_tangent_baseline,
)

from conftest import random_net

GAUSS_1D = make_gaussian_ratio(1, [1.0], [1.0])
DI = InterpolantSpec(kind="DI")
DDBI = InterpolantSpec(kind="DDBI", gamma=0.5, eps=1e-2)


def small_config(**kw):
    base = dict(steps=20, batch_size=64, hidden_widths=[16, 16], n_freq=2, grid_size=16, grid_samples=200,
                interpolant=DI)
    base.update(kw)
    return TrainConfig(**base)


def batch(rng, n=64, dim=1, spec=DI, tangent=False):
    x0 = rng.standard_normal((n, dim))
    x1 = 1.0 + rng.standard_normal((n, dim))
    z = rng.standard_normal((n, dim))
    lo, hi = spec.time_range
    t = rng.uniform(lo, hi, n)
    l = t.copy() if tangent else rng.uniform(lo, 1, n) * t
    return x0, x1, z, l, t


@pytest.mark.parametrize("spec", [DI, DDBI], ids=["DI", "DDBI"])
def test_zero_net_loss_is_target_second_moment(spec, rng):
    x0, x1, z, l, t = batch(rng, spec=spec)
    net = SecantNet.init(1, [8, 8], rng=rng)
    res = csa_loss_batch(net, x0, x1, z, l, t, spec)
    target = conditional_time_score(conditional_law(spec, x0, x1, t), sample_xt(spec, x0, x1, t, z))
    assert res.loss == pytest.approx(np.mean(target**2), rel=1e-14)
    base = ctsm_loss_batch(SecantNet.init(1, [8, 8], n_times=1, rng=rng), x0, x1, z, t, spec)
    assert base.loss == pytest.approx(np.mean(target**2), rel=1e-14)


def test_tangent_pairs_have_no_correction(rng):
    net = random_net(rng, dim=1)
    x0, x1, z, l, t = batch(rng, tangent=True)
    res = csa_loss_batch(net, x0, x1, z, l, t, DI)
    xt = sample_xt(DI, x0, x1, t)
    np.testing.assert_array_equal(res.prediction, net.forward(xt, t, t))


def test_hand_built_single_sample():
    net = SecantNet(dim=1, hidden_widths=[1], n_freq=0)
    (W1, b1), (W2, b2) = net.params.unpack()
    W1[...] = [[0.3, -0.2, 0.5]]
    b1[...] = [0.1]
    W2[...] = [[2.0]]
    b2[...] = [-0.5]
    x0, x1, l, t = 0.4, 1.5, 0.2, 0.6
    # hand arithmetic: x_t = (1 - t) x0 + t x1; DI conditional law N(t x1, (1 - t)^2)
    xt = (1 - t) * x0 + t * x1
    target = (1 + x0 * x1 - x0 * x0) / (1 - t)
    a = math.tanh(0.3 * xt - 0.2 * l + 0.5 * t + 0.1)
    u = 2.0 * a - 0.5
    du_dt = 2.0 * (1 - a * a) * 0.5
    expected = (target - u - (t - l) * du_dt) ** 2
    res = csa_loss_batch(net, np.array([[x0]]), np.array([[x1]]), np.zeros((1, 1)), np.array([l]), np.array([t]), DI)
    assert res.loss == pytest.approx(expected, abs=1e-10)


def test_csa_equals_ctsm_for_tangent_supervision(rng):
    tangent = random_net(rng, dim=2, n_times=1)
    secant = SecantNet.init(2, tangent.hidden_widths, tangent.n_freq, 2, rng=rng)
    secant.params.values[:] = 0.0
    e = 1 + 2 * tangent.n_freq
    for (Ws, bs), (Wt, bt) in zip(secant.params.unpack(), tangent.params.unpack()):
        if Ws.shape == Wt.shape:
            Ws[...], bs[...] = Wt, bt
        else:
            # input layer: copy x and t columns, leave the l columns at zero
            Ws[:, :2] = Wt[:, :2]
            Ws[:, 2 + e:] = Wt[:, 2:]
            bs[...] = bt
    x0, x1, z, l, t = batch(rng, dim=2, tangent=True)
    grid = training.build_importance_grid(DI, make_gaussian_ratio(2, [1, 1], [1, 1]), 16, 200, 0)
    a = csa_loss_batch(secant, x0, x1, z, l, t, DI, grid)
    b = ctsm_loss_batch(tangent, x0, x1, z, t, DI, grid)
    assert abs(a.loss - b.loss) <= 1e-12 * max(1.0, abs(b.loss))


def _surrogate_loss(net, xt, l, t, target, frozen_correction, w):
    u = net.forward(xt, l, t)
    return np.mean(w * (target - u - frozen_correction) ** 2)


@pytest.mark.parametrize("offset", [0.0, 3.7])
def test_stop_gradient_contract(offset, rng):
    """Gradients equal those of the loss with the correction frozen as a constant."""
    net = random_net(rng, dim=1, widths=(5, 4))
    x0, x1, z, l, t = batch(rng, n=8)
    res = csa_loss_batch(net, x0, x1, z, l, t, DI, correction_offset=offset)
    xt = sample_xt(DI, x0, x1, t)
    _, du, _ = net.forward_jvp(xt, (l, t), (np.zeros_like(xt), np.zeros(8), np.ones(8)))
    frozen = (t - l) * du + offset
    w = np.ones(8)
    h = 1e-6
    base = net.params.values.copy()
    fd = np.empty_like(base)
    for i in range(base.size):
        net.params.values[i] = base[i] + h
        up = _surrogate_loss(net, xt, l, t, res.target, frozen, w)
        net.params.values[i] = base[i] - h
        dn = _surrogate_loss(net, xt, l, t, res.target, frozen, w)
        net.params.values[i] = base[i]
        fd[i] = (up - dn) / (2 * h)
    assert np.linalg.norm(res.grads.values - fd) <= 1e-6 * np.linalg.norm(fd)


def test_gradient_ignores_correction_dependence(rng):
    """Differentiating through the correction as well gives a different gradient."""
    net = random_net(rng, dim=1, widths=(5, 4))
    x0, x1, z, l, t = batch(rng, n=8)
    res = csa_loss_batch(net, x0, x1, z, l, t, DI)
    h = 1e-6
    base = net.params.values.copy()
    full = np.empty_like(base)
    for i in range(base.size):
        net.params.values[i] = base[i] + h
        up = csa_loss_batch(net, x0, x1, z, l, t, DI).loss
        net.params.values[i] = base[i] - h
        dn = csa_loss_batch(net, x0, x1, z, l, t, DI).loss
        net.params.values[i] = base[i]
        full[i] = (up - dn) / (2 * h)
    assert np.linalg.norm(res.grads.values - full) > 1e-3 * np.linalg.norm(full)


def test_loss_permutation_invariant(rng):
    net = random_net(rng, dim=1)
    x0, x1, z, l, t = batch(rng, n=32)
    grid = training.build_importance_grid(DI, GAUSS_1D, 16, 200, 0)
    perm = rng.permutation(32)
    a = csa_loss_batch(net, x0, x1, z, l, t, DI, grid)
    b = csa_loss_batch(net, x0[perm], x1[perm], z[perm], l[perm], t[perm], DI, grid)
    assert a.loss == pytest.approx(b.loss, rel=1e-13)
    np.testing.assert_allclose(a.grads.values, b.grads.values, rtol=1e-10, atol=1e-14)


def test_zero_steps_returns_initial_state():
    cfg = small_config(steps=0)
    state = train(cfg, GAUSS_1D)
    init = init_state(cfg, GAUSS_1D)
    assert state.step == 0 and state.loss_history == []
    np.testing.assert_array_equal(state.net.params.values, init.net.params.values)


@pytest.mark.parametrize("fn", [train, train_tangent_baseline])
def test_identical_seeds_bit_identical(fn):
    a = fn(small_config(seed=3), GAUSS_1D).loss_history
    b = fn(small_config(seed=3), GAUSS_1D).loss_history
    c = fn(small_config(seed=4), GAUSS_1D).loss_history
    assert a == b and a != c
    assert [s for s, _ in a] == list(range(20))


def test_checkpoint_resume_matches_straight_run(tmp_path):
    cfg = small_config(steps=30, supervision="cia")
    straight = train(cfg, GAUSS_1D)
    first = train(cfg, GAUSS_1D, stop_at=12)
    assert first.step == 12
    save_checkpoint(first.opt, tmp_path / "mid.npz")
    resumed = train(cfg, GAUSS_1D, state=resume_state(cfg, GAUSS_1D, load_checkpoint(tmp_path / "mid.npz")))
    np.testing.assert_array_equal(resumed.net.params.values, straight.net.params.values)
    assert resumed.loss_history == straight.loss_history


def test_resume_rejects_dimension_mismatch():
    cfg = small_config()
    opt = init_state(cfg, make_gaussian_ratio(2)).opt
    with pytest.raises(ValueError):
        resume_state(cfg, GAUSS_1D, opt)


def test_metrics_file(tmp_path):
    cfg = small_config(steps=25, loss_log_every=10)
    state = train(cfg, GAUSS_1D, metrics_path=tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "step,loss,d_max,dropped"
    assert [int(r.split(",")[0]) for r in lines[1:]] == [0, 10, 20]
    assert float(lines[1].split(",")[2]) == pytest.approx(0.01)
    assert float(lines[1].split(",")[1]) == state.loss_history[0][1]


def test_di_requires_standard_normal_base():
    with pytest.raises(ValueError):
        train(small_config(), make_pathological_mi("additive_noise", 0.45))
    state = train(small_config(steps=2, interpolant=DDBI), make_pathological_mi("additive_noise", 0.45))
    assert state.step == 2


def test_abort_on_dropped_samples(monkeypatch):
    real = training._targets

    def poisoned(spec, x0, x1, z, t):
        xt, target = real(spec, x0, x1, z, t)
        target = target.copy()
        target[: len(target) // 5] = np.nan
        return xt, target

    monkeypatch.setattr(training, "_targets", poisoned)
    with pytest.raises(TrainingAborted):
        train(small_config(steps=3), GAUSS_1D)


def test_few_dropped_samples_are_counted(monkeypatch):
    real = training._targets

    def poisoned(spec, x0, x1, z, t):
        xt, target = real(spec, x0, x1, z, t)
        target = target.copy()
        target[0] = np.inf
        return xt, target

    monkeypatch.setattr(training, "_targets", poisoned)
    state = train(small_config(steps=3), GAUSS_1D)
    assert state.dropped == 3 and np.all(np.isfinite([v for _, v in state.loss_history]))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(jvp_direction="sideways")


def test_cia_prevents_early_loss_blowup():
    """1D Gaussian, LN sampling: with CIA the loss stays under 10x its first value for 500 steps."""
    kw = dict(steps=500, batch_size=256, hidden_widths=[64, 64], sampler="logit_normal", interpolant=DI)
    cia = train(TrainConfig(supervision="cia", **kw), GAUSS_1D)
    losses = np.array([v for _, v in cia.loss_history])
    assert losses.max() <= 10 * losses[0]
