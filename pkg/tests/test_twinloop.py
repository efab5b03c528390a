import numpy as np
import pytest

from vdt.models import make_rnn_regressor
from vdt.numkit import RngStream
from vdt.pinn import BattNN
from vdt.synth import SynthSpec, degrading_cell, seasonal_grid
from vdt.train import TrainConfig, load_checkpoint
from vdt.twinloop import SessionPlan, make_sequences, rolling_update, run_sessions


def test_make_sequences_minimal_case():
    series = np.arange(8.0).reshape(4, 2)  # length L+1 with L=3
    X, y = make_sequences(series, 3, [1])
    assert X.shape == (1, 3, 2)
    assert np.array_equal(X[0], series[:3])
    assert np.array_equal(y, [[7.0]])


def test_make_sequences_index_arithmetic():
    series = np.arange(20.0).reshape(10, 2)
    X, y = make_sequences(series, 3, [0])
    assert X.shape == (7, 3, 2)
    assert np.array_equal(X[0], series[0:3])
    assert y[0, 0] == series[3, 0]
    assert y[-1, 0] == series[9, 0]


def test_make_sequences_constant_series():
    series = np.ones((9, 3))
    X, y = make_sequences(series, 4, [2])
    assert np.all(X == 1.0) and np.all(y == 1.0)
    assert len({x.tobytes() for x in X}) == 1


def test_make_sequences_too_short():
    with pytest.raises(ValueError, match="need more than"):
        make_sequences(np.ones((4, 2)), 4, [0])


def test_session_plan_slices_tile_without_overlap():
    plan = SessionPlan(seq_len=5, train_window=50, test_window=30, sessions=4)
    for t in range(4):
        tr, te = plan.train_slice(t), plan.test_slice(t)
        assert te.start == tr.stop  # test follows train immediately
        if t:
            prev = plan.train_slice(t - 1)
            assert tr.start == prev.stop  # train windows tile the stream
    assert plan.pairs_needed() == 4 * 50 + 30


def _grid_setup(n=900, seed=0):
    series = seasonal_grid(SynthSpec("seasonal_grid", n=n, seed=seed, noise=0.02))
    return series


def _factory(hidden=10):
    def make(stream):
        return make_rnn_regressor(8, 2, stream, cell="gru", rnn_hidden=[hidden])
    return make


def _config(epochs=4, seed=0):
    return TrainConfig(epochs=epochs, batch_size=64, lr=5e-3, seed=seed,
                       beta=1e-4, clip_norm=5.0)


def test_run_sessions_shapes_and_causality(tmp_path):
    series = _grid_setup()
    plan = SessionPlan(seq_len=8, train_window=200, test_window=100, sessions=3)
    logs = run_sessions(series, [6, 7], plan, _config(), _factory(), tmp_path,
                        ci_samples=8)
    assert [l.session for l in logs] == [0, 1, 2]
    for log in logs:
        assert log.train_wall_s >= 0 and log.infer_wall_s >= 0
        assert log.n_train_pairs == 200
        assert {"r2_y0", "mae_y0", "rmse_y0", "r2_y1", "coverage", "width"} <= set(log.metrics)
    # distinct training windows hash differently
    assert len({l.train_rows_crc for l in logs}) == 3


def test_run_sessions_warm_start_bit_exact(tmp_path):
    series = _grid_setup(seed=1)
    plan = SessionPlan(seq_len=8, train_window=150, test_window=60, sessions=2)
    factory = _factory()
    logs = run_sessions(series, [6, 7], plan, _config(seed=1), factory, tmp_path,
                        ci_samples=8)
    # replay session 1 by hand from the session-0 checkpoint: the trained
    # result must match the pipeline's session-1 checkpoint bit for bit
    from vdt.train import apply_checkpoint, fit
    from vdt.twinloop import make_sequences as ms
    from vdt.numkit import fit_scaler

    scaler = fit_scaler(series[: 8 + 150])
    Xs, _ = ms(scaler.transform(series), 8, [6, 7])
    ys = scaler.select([6, 7]).transform(ms(series, 8, [6, 7])[1])
    model = factory(RngStream(123))
    apply_checkpoint(model, load_checkpoint(logs[0].checkpoint))
    cfg = _config(seed=1)
    replay_cfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                             seed=cfg.seed * 8191 + 1, beta=cfg.beta, clip_norm=cfg.clip_norm)
    fit(model, (Xs[150:300], ys[150:300]), replay_cfg)
    stored = load_checkpoint(logs[1].checkpoint)
    for name, var, _ in model.params():
        assert np.array_equal(var.value, stored.tensors[name]), name


def test_run_sessions_missing_checkpoint_hint(tmp_path):
    series = _grid_setup(seed=2)
    plan = SessionPlan(seq_len=8, train_window=150, test_window=60, sessions=2)
    import os
    from unittest import mock

    real_exists = os.path.exists

    def fake_exists(p):
        if str(p).endswith("session_000.vdtc"):
            return False
        return real_exists(p)

    with mock.patch("vdt.twinloop.os.path.exists", side_effect=fake_exists):
        with pytest.raises(FileNotFoundError, match="resume"):
            run_sessions(series, [6, 7], plan, _config(seed=2), _factory(), tmp_path,
                         ci_samples=8)


def test_run_sessions_metrics_reproducible(tmp_path):
    series = _grid_setup(seed=3)
    plan = SessionPlan(seq_len=8, train_window=120, test_window=60, sessions=2)
    a = run_sessions(series, [6, 7], plan, _config(seed=3), _factory(), tmp_path / "a",
                     ci_samples=8)
    b = run_sessions(series, [6, 7], plan, _config(seed=3), _factory(), tmp_path / "b",
                     ci_samples=8)
    assert [l.metrics for l in a] == [l.metrics for l in b]


def test_run_sessions_plan_too_large(tmp_path):
    series = _grid_setup(n=300)
    plan = SessionPlan(seq_len=8, train_window=200, test_window=100, sessions=3)
    with pytest.raises(ValueError, match="plan needs"):
        run_sessions(series, [6, 7], plan, _config(), _factory(), tmp_path)


# -- rolling battery updates ----------------------------------------------------


def _cell_profiles(n=24, seed=0):
    return degrading_cell(SynthSpec("degrading_cell", n=n, seed=seed, steps=30, drift=0.02))


def _batt_config(epochs=3, seed=0):
    return TrainConfig(epochs=epochs, batch_size=10, lr=2e-2, seed=seed, beta=1e-4,
                       weight_decay=5e-4)


def test_rolling_update_causality_provenance():
    profiles = _cell_profiles()
    model = BattNN.init(RngStream(0), dt=profiles[0].dt)
    records = rolling_update(profiles, model, _batt_config(), block=8, ci_samples=6)
    assert [r.block for r in records] == [1, 2]
    for r in records:
        assert max(r.trained_blocks) < r.block  # never trained on its own window
        assert len(r.per_discharge_mse) == len(r.profile_indices)
        assert r.width >= 0 and 0 <= r.coverage <= 1
    assert records[0].trained_blocks == [0]
    assert records[1].trained_blocks == [0, 1]


def test_rolling_update_single_block_split():
    # block = everything minus the last chunk: one update, a static split
    profiles = _cell_profiles(n=20)
    model = BattNN.init(RngStream(1), dt=profiles[0].dt)
    records = rolling_update(profiles, model, _batt_config(seed=1), block=15, ci_samples=6)
    assert len(records) == 1
    assert records[0].profile_indices == list(range(15, 20))


def test_rolling_update_needs_two_blocks():
    profiles = _cell_profiles(n=6)
    model = BattNN.init(RngStream(2), dt=profiles[0].dt)
    with pytest.raises(ValueError, match="block"):
        rolling_update(profiles, model, _batt_config(), block=10)
