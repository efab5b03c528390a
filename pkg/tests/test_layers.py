import numpy as np
import pytest

from vdt import autodiff as ad
from vdt.layers import (
    Dense,
    GruCell,
    LstmCell,
    RnnStack,
    VanillaCell,
    dense_forward,
    grad_check,
    gru_step,
    lstm_step,
    make_cell,
    unroll,
)
from vdt.numkit import RngStream


def test_dense_identity_map():
    layer = Dense(np.eye(3), np.zeros(3), "identity")
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(dense_forward(layer, x), x)


def test_dense_zero_weights_sigmoid_half():
    layer = Dense(np.zeros((4, 2)), np.zeros(2), "sigmoid")
    out = dense_forward(layer, np.ones((3, 4)))
    assert np.all(out == 0.5)


def test_dense_shape_mismatch_names_shapes():
    layer = Dense(np.zeros((4, 2)), np.zeros(2))
    with pytest.raises(ValueError, match=r"\(3, 5\).*4"):
        dense_forward(layer, np.ones((3, 5)))


def test_dense_gradient_check():
    for seed in range(5):
        layer = Dense.init(4, 3, "tanh", RngStream(seed))
        report = grad_check(layer, tolerance=1e-5, stream=RngStream(seed + 100))
        assert report.passed, report.errors


def test_identity_dense_quadratic_closed_form():
    # loss = mean((x@W - y)^2) at W=I has gradient (2/N/out) x^T (x - y)
    layer = Dense(np.eye(2), np.zeros(2), "identity")
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    y = np.array([[0.0, 1.0], [1.0, 0.0]])
    loss = ad.mean_squared_error(layer(ad.constant(x)), ad.constant(y))
    loss.backward()
    expected = 2.0 / y.size * x.T @ (x - y)
    assert np.allclose(layer.w.grad, expected, atol=1e-12)


def test_gru_zero_params_zero_state():
    cell = GruCell(np.zeros((2, 9)), np.zeros((3, 6)), np.zeros((3, 3)), np.zeros(9))
    d = cell.step_detail(ad.constant(np.zeros((1, 2))), ad.constant(np.zeros((1, 3))))
    assert np.all(d["z"].value == 0.5)
    assert np.all(d["r"].value == 0.5)
    assert np.all(d["h_cand"].value == 0.0)
    assert np.all(d["h"].value == 0.0)


def test_gru_forced_update_gate_takes_candidate():
    # bias 50 on z drives the gate to ~1, so h becomes the candidate
    stream = RngStream(1)
    cell = make_cell("gru", 2, 3, stream)
    cell.b.value[:3] = 50.0
    x = np.array([0.3, -0.2])
    h_prev = np.array([0.1, 0.2, -0.3])
    d = cell.step_detail(ad.constant(x.reshape(1, -1)), ad.constant(h_prev.reshape(1, -1)))
    assert np.allclose(d["h"].value, d["h_cand"].value, atol=1e-9)


def test_gru_gate_ranges_and_blend_identity():
    rng = np.random.default_rng(2)
    for seed in range(10):
        cell = make_cell("gru", 3, 4, RngStream(seed))
        x = rng.normal(size=(1, 3))
        h_prev = np.tanh(rng.normal(size=(1, 4)))  # inside (-1, 1)
        d = cell.step_detail(ad.constant(x), ad.constant(h_prev))
        z, r, h_cand, h = (d[k].value for k in ("z", "r", "h_cand", "h"))
        assert np.all((z > 0) & (z < 1)) and np.all((r > 0) & (r < 1))
        assert np.all((h > -1) & (h < 1))
        # the blend identity holds bitwise when recomputed from the logged gates
        assert np.array_equal(h, (1 - z) * h_prev + z * h_cand)


def test_gru_gradient_check():
    for seed in range(5):
        cell = make_cell("gru", 2, 3, RngStream(seed))
        report = grad_check(cell, tolerance=1e-5, stream=RngStream(seed + 50))
        assert report.passed, report.errors


def test_lstm_zero_params():
    cell = LstmCell(np.zeros((2, 12)), np.zeros((3, 12)), np.zeros(12))
    d = cell.step_detail(
        ad.constant(np.zeros((1, 2))),
        (ad.constant(np.zeros((1, 3))), ad.constant(np.zeros((1, 3)))),
    )
    for gate in ("i", "f", "o"):
        assert np.all(d[gate].value == 0.5)
    assert np.all(d["c_cand"].value == 0.0)
    assert np.all(d["c"].value == 0.0)
    assert np.all(d["h"].value == 0.0)


def test_lstm_perfect_memory_limit():
    # forget gate forced to 1, input gate to 0: the memory passes through
    cell = make_cell("lstm", 2, 3, RngStream(3))
    hid = 3
    cell.b.value[0:hid] = -50.0  # input gate ~ 0
    cell.b.value[hid : 2 * hid] = 50.0  # forget gate ~ 1
    c_prev = np.array([0.4, -0.2, 0.9])
    h, c = lstm_step(cell, np.array([0.5, 0.5]), (np.zeros(3), c_prev))
    assert np.allclose(c, c_prev, atol=1e-9)


def test_lstm_memory_identity_bitwise():
    for seed in range(10):
        cell = make_cell("lstm", 2, 4, RngStream(seed))
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, 2))
        h_prev = rng.normal(size=(1, 4))
        c_prev = rng.normal(size=(1, 4))
        d = cell.step_detail(ad.constant(x), (ad.constant(h_prev), ad.constant(c_prev)))
        i, f, c_cand, c = (d[k].value for k in ("i", "f", "c_cand", "c"))
        assert np.array_equal(c, f * c_prev + i * c_cand)
        assert np.all((i > 0) & (i < 1) & (f > 0) & (f < 1))


def test_lstm_gradient_check():
    for seed in range(5):
        cell = make_cell("lstm", 2, 3, RngStream(seed))
        report = grad_check(cell, tolerance=1e-5, stream=RngStream(seed + 80))
        assert report.passed, report.errors


def test_unroll_single_step_equals_step():
    cell = make_cell("vanilla", 2, 3, RngStream(4))
    x = np.array([[0.3, -0.5]])
    out = unroll(cell, x)
    h = cell.step(ad.constant(x), ad.constant(np.zeros((1, 3)))).value
    assert np.array_equal(out, h)


def test_unroll_memoryless_when_recurrent_weights_zero():
    cell = make_cell("vanilla", 2, 3, RngStream(5))
    cell.w_h.value[:] = 0.0
    rng = np.random.default_rng(5)
    seq = rng.normal(size=(6, 2))
    out = unroll(cell, seq)
    # memoryless: each step depends only on x_t
    per_step = np.vstack([unroll(cell, seq[t : t + 1]) for t in range(6)])
    assert np.allclose(out, per_step, atol=1e-15)


def test_unroll_empty_sequence_rejected():
    cell = make_cell("vanilla", 2, 3, RngStream(6))
    with pytest.raises(ValueError, match="empty sequence"):
        unroll(cell, np.zeros((0, 2)))


@pytest.mark.parametrize("kind", ["vanilla", "gru", "lstm"])
def test_unroll_state_passing_associativity(kind):
    cell = make_cell(kind, 2, 3, RngStream(7))
    rng = np.random.default_rng(7)
    seq = rng.normal(size=(8, 2))
    full = unroll(cell, seq)
    first, state = unroll(cell, seq[:3], return_state=True)
    second = unroll(cell, seq[3:], h0=state[0])
    assert np.array_equal(full, np.vstack([first, second]))


def test_unroll_stacked_cells():
    stream = RngStream(8)
    cells = [make_cell("gru", 2, 4, stream.derive(0)), make_cell("gru", 4, 3, stream.derive(1))]
    seq = np.random.default_rng(8).normal(size=(5, 2))
    out = unroll(cells, seq)
    assert out.shape == (5, 3)
    # equivalent to feeding the first layer's full output into the second
    inner = unroll(cells[0], seq)
    assert np.array_equal(out, unroll(cells[1], inner))


def test_bptt_gradient_check_t5():
    for seed in range(3):
        cell = make_cell("vanilla", 2, 3, RngStream(seed))
        report = grad_check(cell, tolerance=1e-4, stream=RngStream(seed + 11))
        assert report.passed, report.errors


def test_rnn_stack_gradient_check():
    stack = RnnStack.init("gru", 2, [3, 3], RngStream(9))
    report = grad_check(stack, tolerance=1e-4, stream=RngStream(10))
    assert report.passed, report.errors


def test_stack_forward_last_matches_unroll():
    stack = RnnStack.init("lstm", 2, [3], RngStream(11))
    seq = np.random.default_rng(11).normal(size=(4, 2))
    batched = stack.forward_last(seq[None, :, :]).value[0]
    single = unroll(stack.cells, seq)[-1]
    assert np.array_equal(batched, single)
