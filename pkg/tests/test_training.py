import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phifno import fno
from phifno import tensor as T
from phifno import training as TR

HYPER = fno.FnoHyperparams(n_d=4, modes=3, n_Q=8, pad=2)


def test_fd_gradients_examples():
    X, Y = np.meshgrid(np.linspace(0, 1, 5), np.linspace(0, 1, 5), indexing="ij")
    gx, gy = TR.fd_gradients(X, 0.25)
    assert np.allclose(gx[1:-1], 1.0, rtol=1e-14) and np.all(gy == 0)
    gx, gy = TR.fd_gradients(np.full((5, 5), 3.0), 0.25)
    assert np.all(gx == 0) and np.all(gy == 0)
    gx, _ = TR.fd_gradients(X**2, 0.25)
    assert gx[2, 2] == 1.0
    with pytest.raises(ValueError):
        TR.fd_gradients(np.zeros((2, 5)), 0.25)


def loop_loss(u_true, u_pred, S0, S1, semi=False):
    n, nx, ny = u_true.shape
    dx, dy = 1 / (nx - 1), 1 / (ny - 1)
    total = 0.0
    for b in range(n):
        d = u_pred[b] - u_true[b]
        for i in range(nx):
            for j in range(ny):
                if S0[b, i, j] and not semi:
                    total += d[i, j] ** 2
                if S1[b, i, j]:
                    total += ((d[i + 1, j] - d[i - 1, j]) / (2 * dx)) ** 2
                    total += ((d[i, j + 1] - d[i, j - 1]) / (2 * dy)) ** 2
    return total / n


@pytest.mark.parametrize("semi", [False, True])
def test_loss_matches_loop_oracle(rng, semi):
    u_true, u_pred = rng.normal(size=(2, 2, 5, 5))
    S0 = rng.random((2, 5, 5)) < 0.8
    S1 = np.zeros_like(S0)
    S1[:, 1:-1, 1:-1] = rng.random((2, 3, 3)) < 0.6
    mode = "semi_h1" if semi else "full_h1"
    value = float(TR.loss(u_true[:, None], u_pred[:, None], S0, S1, mode).data)
    assert abs(value - loop_loss(u_true, u_pred, S0, S1, semi)) <= 1e-13 * max(1.0, value)


def test_loss_zero_and_errors(rng):
    u = rng.normal(size=(3, 1, 6, 6))
    S0 = np.ones((3, 6, 6), bool)
    assert float(TR.loss(u, u, S0, S0).data) == 0.0
    with pytest.raises(ValueError):
        TR.loss(u, u, S0, S0, "h2")
    with pytest.raises(ValueError):
        TR.loss(u[:0], u[:0], S0[:0], S0[:0])


@given(st.floats(-100, 100), st.integers(0, 1000))
def test_semi_h1_shift_invariance(c, seed):
    r = np.random.default_rng(seed)
    u_true, u_pred = r.normal(size=(2, 2, 1, 7, 6))
    S1 = np.zeros((2, 7, 6), bool)
    S1[:, 1:-1, 1:-1] = True
    a = float(TR.loss(u_true, u_pred, S1, S1, "semi_h1").data)
    b = float(TR.loss(u_true, u_pred + c, S1, S1, "semi_h1").data)
    assert abs(a - b) <= 1e-12 * max(1.0, a)


@given(st.integers(0, 1000))
def test_full_loss_is_nonnegative(seed):
    r = np.random.default_rng(seed)
    u_true, u_pred = r.normal(size=(2, 1, 1, 5, 5))
    S = r.random((1, 5, 5)) < 0.5
    assert float(TR.loss(u_true, u_pred, S, S).data) >= 0


def test_metric_identities(rng):
    u = rng.normal(size=(8, 8))
    S0 = rng.random((8, 8)) < 0.7
    assert TR.metric_E1(u, u, S0) == 0.0
    assert TR.metric_E1(u, np.zeros_like(u), S0) == 1.0
    assert TR.metric_E1(u, 2 * u, S0) == 1.0
    with pytest.raises(ValueError):
        TR.metric_E1(np.zeros_like(u), u, S0)


@given(st.floats(1e-3, 1e3), st.booleans(), st.integers(0, 1000))
def test_metric_scale_invariance(c, negate, seed):
    r = np.random.default_rng(seed)
    u, v = r.normal(size=(2, 6, 6))
    S0 = np.ones((6, 6), bool)
    c = -c if negate else c
    assert TR.metric_E1(c * u, c * v, S0) == pytest.approx(TR.metric_E1(u, v, S0), rel=1e-12)


def test_adam_first_step_and_zero_gradient():
    state = TR.AdamState.zeros(1)
    theta = TR.adam_step(np.array([0.3]), np.array([-2.0]), state, lr=0.01)
    assert theta[0] == pytest.approx(0.3 + 0.01 * 2.0 / (2.0 + 1e-7), rel=1e-15)
    state = TR.AdamState.zeros(3)
    theta0 = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(TR.adam_step(theta0, np.zeros(3), state, lr=0.1), theta0)
    with pytest.raises(FloatingPointError):
        TR.adam_step(theta0, np.array([np.nan, 0, 0]), state, lr=0.1)


def reference_adam(theta, g, steps, lr, b1=0.9, b2=0.999, eps=1e-7, w1=0.0):
    m = v = 0.0
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        theta = theta - lr * mh / (math.sqrt(vh) + eps) - w1 * theta
    return theta


@pytest.mark.parametrize("w1", [0.0, 1e-3])
def test_adam_recurrence(w1):
    state = TR.AdamState.zeros(1)
    theta = np.array([0.7])
    for _ in range(5):
        theta = TR.adam_step(theta, np.array([0.25]), state, lr=0.05, weight_decay=w1)
    assert abs(theta[0] - reference_adam(0.7, 0.25, 5, 0.05, w1=w1)) <= 1e-14


def test_plateau_scheduler():
    s = TR.PlateauScheduler(1.0, factor=0.5, patience=3, min_lr=0.01)
    lrs = [s.step(1.0) for _ in range(12)]
    # first call sets the best value, the next calls are non-improving
    halvings = [k + 1 for k in range(1, 12) if lrs[k] < lrs[k - 1]]
    assert halvings == [4, 7, 10]
    s = TR.PlateauScheduler(1.0, patience=2)
    assert all(s.step(10.0 / (k + 1)) == 1.0 for k in range(50))
    s = TR.PlateauScheduler(1.0, factor=0.1, patience=1, min_lr=0.05)
    assert min(s.step(1.0) for _ in range(10)) == 0.05
    with pytest.raises(ValueError):
        TR.PlateauScheduler(1.0, factor=1.0)


def test_plateau_halving_at_patience_multiples_after_stall():
    s = TR.PlateauScheduler(1.0, factor=0.5, patience=3, best=1.0)
    lrs = [s.step(1.0) for _ in range(9)]
    assert lrs == [1, 1, 0.5, 0.5, 0.5, 0.25, 0.25, 0.25, 0.125]


@given(st.integers(1, 50), st.integers(1, 12), st.integers(0, 100))
def test_partition_covers_each_index_once(n, b, seed):
    batches = TR.partition(n, b, np.random.default_rng(seed))
    flat = np.concatenate(batches)
    assert sorted(flat) == list(range(n))
    assert all(len(x) <= b for x in batches)


def test_summarize_examples():
    s = TR.summarize([0.1, 0.2, 0.3])
    assert s["median"] == 0.2 and s["n"] == 3
    with pytest.raises(ValueError):
        TR.summarize([])


@pytest.fixture(scope="module")
def splits(tiny_dataset):
    data = TR.to_batchable(tiny_dataset)
    from dataclasses import replace

    def sub(ids):
        return replace(data, **{k: getattr(data, k)[ids] for k in ("f", "phi", "g", "w", "S0", "S1")})

    return sub(np.arange(8)), sub(np.arange(8, 12))


def test_loss_gradient_matches_finite_differences(splits):
    train, _ = splits
    params = fno.init_params(HYPER, np.random.default_rng(1), TR.stats_for(train, False))
    idx = np.arange(3)
    with T.Tape() as tape:
        L = TR.batch_loss(params, train, idx, "full_h1")
    T.backward(L, tape, params.leaves())
    grad = params.grad_blob()
    theta = params.to_blob()
    coords = np.argsort(-np.abs(grad))[:10]
    for k in coords:
        vals = []
        for s in (1e-5, -1e-5):
            p = params.copy()
            t = theta.copy()
            t[k] += s
            p.set_blob(t)
            with T.no_grad():
                vals.append(float(TR.batch_loss(p, train, idx, "full_h1").data))
        fd = (vals[0] - vals[1]) / 2e-5
        assert abs(fd - grad[k]) <= 1e-5 * abs(grad[k])


def test_evaluate_baselines(splits):
    train, _ = splits
    zero = fno.init_params(HYPER, np.random.default_rng(0))
    zero.set_blob(np.zeros(fno.param_count(HYPER)))
    values, summary = TR.evaluate(zero, train)  # output is 0 in w, so u = g
    u = train.u
    expected = [TR.metric_E1(u[k], train.g[k], train.S0[k]) for k in range(len(train))]
    assert np.allclose(values, expected, rtol=1e-14)
    assert all(TR.metric_E1(u[k], u[k], train.S0[k]) == 0 for k in range(len(train)))
    assert all(TR.metric_E1(u[k], 0 * u[k], train.S0[k]) == 1 for k in range(len(train)))


def test_zero_epochs_returns_initial_params(splits):
    train, val = splits
    cfg = TR.TrainConfig(epochs=0, batch_size=4, seed=2)
    state = TR.train(train, val, HYPER, cfg)
    assert state.log == [] and state.epoch == 0
    init = TR.init_state(train, HYPER, cfg, val)
    assert np.array_equal(state.best.to_blob(), init.params.to_blob())


def test_training_reduces_loss_and_is_deterministic(splits):
    train, val = splits
    cfg = TR.TrainConfig(epochs=30, batch_size=4, lr=5e-3, seed=1)
    a = TR.train(train, val, HYPER, cfg)
    b = TR.train(train, val, HYPER, cfg)
    assert a.log == b.log
    assert np.array_equal(a.best.to_blob(), b.best.to_blob())
    assert a.log[-1].val_loss < a.initial_val_loss
    # best-model property
    assert TR.dataset_loss(a.best, val, cfg.loss_mode) == pytest.approx(min(r.val_loss for r in a.log), rel=1e-12)
    assert a.best_val_loss == min(r.val_loss for r in a.log)
    best_flags = [r for r in a.log if r.is_best]
    assert best_flags[-1].val_loss == a.best_val_loss


def test_resume_reproduces_uninterrupted_run(splits, tmp_path):
    train, val = splits
    full = TR.train(train, val, HYPER, TR.TrainConfig(epochs=4, batch_size=4, lr=5e-3, seed=7))
    part = TR.train(train, val, HYPER, TR.TrainConfig(epochs=2, batch_size=4, lr=5e-3, seed=7))
    TR.save_state(part, tmp_path / "state.npz")
    resumed = TR.load_state(tmp_path / "state.npz")
    resumed = TR.train(train, val, HYPER, TR.TrainConfig(epochs=4, batch_size=4, lr=5e-3, seed=7), resumed)
    assert resumed.log == full.log
    assert np.array_equal(resumed.params.to_blob(), full.params.to_blob())


def test_l2_regularization_changes_the_update(splits):
    train, val = splits
    base = TR.train(train, val, HYPER, TR.TrainConfig(epochs=1, batch_size=4, seed=0))
    reg = TR.train(train, val, HYPER, TR.TrainConfig(epochs=1, batch_size=4, seed=0, l2_lambda=10.0))
    assert not np.array_equal(base.params.to_blob(), reg.params.to_blob())


def test_log_round_trip(tmp_path):
    log = [TR.EpochRecord(1, 0.5, 0.25, 0.1, 1e-3, True), TR.EpochRecord(2, 0.4, 0.3, 0.2, 5e-4, False)]
    TR.write_log(log, tmp_path / "log.csv")
    assert TR.read_log(tmp_path / "log.csv") == log
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == ",".join(TR.LOG_COLUMNS)


def test_config_validation():
    for bad in ({"lr": 0}, {"beta1": 1.0}, {"eps": 0}, {"batch_size": 0}, {"loss_mode": "x"}):
        with pytest.raises(ValueError):
            TR.TrainConfig(**bad)
