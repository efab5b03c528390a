import numpy as np
import pytest

from vdt import autodiff as ad
from vdt.layers import Dense
from vdt.models import make_dense_regressor
from vdt.numkit import RngStream
from vdt.train import (
    AdamState,
    BadMagicError,
    CorruptPayloadError,
    ShapeMismatchError,
    TrainConfig,
    TruncatedFileError,
    VersionMismatchError,
    adam_step,
    apply_checkpoint,
    clip_gradients,
    fit,
    load_checkpoint,
    restore_adam,
    save_checkpoint,
)


def _named(values):
    return [(name, ad.param(v), True) for name, v in values.items()]


def test_adam_zero_gradient_is_fixed_point():
    params = _named({"w": np.array([1.0, -2.0])})
    state = AdamState(lr=0.1)
    adam_step(state, params, {"w": np.zeros(2)})
    assert np.array_equal(params[0][1].value, [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    # bias correction makes the first update -lr * g/(|g|+eps)
    g = np.array([0.3, -2.0, 1e-3])
    params = _named({"w": np.zeros(3)})
    state = AdamState(lr=0.05)
    adam_step(state, params, {"w": g.copy()})
    expected = -0.05 * g / (np.abs(g) + state.eps)
    assert np.max(np.abs(params[0][1].value - expected)) < 1e-9


def test_adam_decoupled_decay_with_zero_gradient():
    params = _named({"w": np.array([2.0])})
    state = AdamState(lr=0.1, weight_decay=0.5)
    adam_step(state, params, {"w": np.zeros(1)})
    assert params[0][1].value[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5), abs=1e-15)


def test_adam_decay_skips_unflagged_params():
    var = ad.param(np.array([3.0]))
    state = AdamState(lr=0.1, weight_decay=0.5)
    adam_step(state, [("rho", var, False)], {"rho": np.zeros(1)})
    assert var.value[0] == 3.0


def test_adam_shape_mismatch_rejected():
    params = _named({"w": np.zeros(3)})
    with pytest.raises(ValueError, match="shape"):
        adam_step(AdamState(lr=0.1), params, {"w": np.zeros(2)})


def test_clip_gradients_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = clip_gradients(grads, 1.0)
    assert norm == pytest.approx(5.0)
    total = np.sqrt(grads["a"][0] ** 2 + grads["b"][0] ** 2)
    assert total == pytest.approx(1.0)


def test_lr_schedule_product_of_reached_multipliers():
    cfg = TrainConfig(epochs=600, batch_size=1, lr=2e-2,
                      lr_schedule=((100, 0.5), (500, 0.5)))
    assert cfg.lr_at(0) == 2e-2
    assert cfg.lr_at(99) == 2e-2
    assert cfg.lr_at(100) == 1e-2
    assert cfg.lr_at(499) == 1e-2
    assert cfg.lr_at(500) == 5e-3


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0, batch_size=1, lr=0.1)
    with pytest.raises(ValueError):
        TrainConfig(epochs=1, batch_size=0, lr=0.1)


class LinearModel:
    """One dense identity layer; deterministic, no KL."""

    def __init__(self, seed=0):
        self.layer = Dense.init(1, 1, "identity", RngStream(seed))

    def params(self):
        return self.layer.params("lin")

    def predict(self, X, stream=None):
        return self.layer(ad.constant(X)).value

    def batch_loss(self, data, idx, stream, config):
        X, y = data
        return ad.mean_squared_error(self.layer(ad.constant(X[idx])), ad.constant(y[idx]))


def _linear_data(n=64, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 1))
    return X, 2.0 * X


def test_fit_linear_converges():
    model = LinearModel()
    data = _linear_data()
    cfg = TrainConfig(epochs=200, batch_size=16, lr=0.05, seed=1, beta=0.0)
    result = fit(model, data, cfg)
    assert result.loss_trace[-1] < 1e-6
    assert len(result.loss_trace) == 200


def test_fit_same_seed_identical_trace():
    data = _linear_data()
    cfg = TrainConfig(epochs=20, batch_size=8, lr=0.05, seed=7)
    t1 = fit(LinearModel(), data, cfg).loss_trace
    t2 = fit(LinearModel(), data, cfg).loss_trace
    assert t1 == t2


def test_fit_empty_dataset_rejected():
    with pytest.raises(ValueError, match="empty"):
        fit(LinearModel(), (np.zeros((0, 1)), np.zeros((0, 1))), TrainConfig(1, 1, 0.1))


def test_fit_loss_eventually_decreasing_across_seeds():
    wins = 0
    for seed in range(20):
        model = make_dense_regressor(1, [8], 1, RngStream(seed))
        data = _linear_data(seed=seed)
        cfg = TrainConfig(epochs=60, batch_size=16, lr=0.02, seed=seed, beta=0.0)
        trace = fit(model, data, cfg).loss_trace
        if trace[-1] < 0.1 * trace[0]:
            wins += 1
    assert wins >= 18


def test_fit_determinism_bitwise_parameters():
    data = _linear_data()
    cfg = TrainConfig(epochs=15, batch_size=8, lr=0.01, seed=3)
    models = []
    for _ in range(2):
        m = make_dense_regressor(1, [4], 1, RngStream(5))
        fit(m, data, cfg)
        models.append(m)
    for (n1, v1, _), (n2, v2, _) in zip(models[0].params(), models[1].params()):
        assert n1 == n2 and np.array_equal(v1.value, v2.value)


def test_weight_decay_never_touches_variational_params():
    # one full-batch step with and without decay: the weight matrix must
    # differ (it is decayed) while mu/rho match exactly (they never are)
    data = _linear_data()
    results = []
    for wd in (0.0, 0.25):
        model = make_dense_regressor(1, [4], 1, RngStream(9))
        cfg = TrainConfig(epochs=1, batch_size=64, lr=0.05, seed=2, beta=0.0, weight_decay=wd)
        fit(model, data, cfg)
        results.append(model)
    plain, decayed = results
    assert not np.array_equal(plain.trunk[0].w.value, decayed.trunk[0].w.value)
    assert np.array_equal(plain.head.rho.value, decayed.head.rho.value)
    assert np.array_equal(plain.head.mu.value, decayed.head.mu.value)
    assert np.array_equal(plain.trunk[0].b.value, decayed.trunk[0].b.value)


# -- checkpoints ----------------------------------------------------------------


def test_checkpoint_roundtrip_bitwise(tmp_path):
    model = make_dense_regressor(2, [5], 1, RngStream(4))
    x = np.random.default_rng(4).normal(size=(6, 2))
    before = model.predict(x)
    path = tmp_path / "model.vdtc"
    save_checkpoint(model, path)
    fresh = make_dense_regressor(2, [5], 1, RngStream(99))
    apply_checkpoint(fresh, load_checkpoint(path))
    assert np.array_equal(fresh.predict(x), before)


def test_checkpoint_save_load_save_byte_identical(tmp_path):
    model = make_dense_regressor(2, [3], 1, RngStream(5))
    p1, p2 = tmp_path / "a.vdtc", tmp_path / "b.vdtc"
    save_checkpoint(model, p1)
    apply_checkpoint(model, load_checkpoint(p1))
    save_checkpoint(model, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.vdtc"
    model = make_dense_regressor(1, [2], 1, RngStream(6))
    save_checkpoint(model, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(BadMagicError, match="bad magic"):
        load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path):
    import struct
    import zlib

    path = tmp_path / "v9.vdtc"
    payload = b"VDTC" + struct.pack("<II", 9, 0)
    path.write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))
    with pytest.raises(VersionMismatchError):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    model = make_dense_regressor(1, [2], 1, RngStream(6))
    path = tmp_path / "full.vdtc"
    save_checkpoint(model, path)
    blob = path.read_bytes()
    cut = tmp_path / "cut.vdtc"
    cut.write_bytes(blob[: len(blob) // 2])
    with pytest.raises((TruncatedFileError, CorruptPayloadError)):
        load_checkpoint(cut)


def test_checkpoint_flipped_payload_byte(tmp_path):
    model = make_dense_regressor(1, [2], 1, RngStream(6))
    path = tmp_path / "flip.vdtc"
    save_checkpoint(model, path)
    blob = bytearray(path.read_bytes())
    blob[20] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptPayloadError):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch_names_parameter(tmp_path):
    model = make_dense_regressor(2, [5], 1, RngStream(7))
    path = tmp_path / "m.vdtc"
    save_checkpoint(model, path)
    other = make_dense_regressor(2, [6], 1, RngStream(7))
    with pytest.raises(ShapeMismatchError, match="shape mismatch for "):
        apply_checkpoint(other, load_checkpoint(path))


def test_checkpoint_optimizer_state_roundtrip(tmp_path):
    model = make_dense_regressor(1, [3], 1, RngStream(8))
    data = _linear_data()
    cfg = TrainConfig(epochs=3, batch_size=16, lr=0.01, seed=1)
    adam = AdamState(lr=cfg.lr)
    fit(model, data, cfg, adam=adam)
    path = tmp_path / "opt.vdtc"
    save_checkpoint(model, path, adam=adam)
    back = restore_adam(load_checkpoint(path), lr=cfg.lr)
    assert back.step == adam.step
    for name in adam.m:
        assert np.array_equal(back.m[name], adam.m[name])
        assert np.array_equal(back.v[name], adam.v[name])
