"""Differentiable backbone layers: dense maps and recurrent cells.

Forward conventions are batch-first: activations are (batch, features)
matrices, weights are stored (in, out) so a step is ``x @ W + b``. Hidden
recurrences follow the usual formulations exactly -- vanilla
h_t = tanh(W_h h + W_x x + b); LSTM input/forget/output gates with memory
c_t = f*c_prev + i*c_cand; GRU update/reset gates with the new state a
convex blend (1-z)*h_prev + z*h_cand.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .numkit import RngStream

ACTIVATIONS = {
    "identity": lambda v: v,
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "softplus": ad.softplus,
}


def _uniform_init(stream: RngStream, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return stream.generator().uniform(-bound, bound, size=shape)


def _check_cols(x, expected: int, what: str):
    got = x.shape[-1]
    if got != expected:
        raise ValueError(
            f"{what}: input shape {x.shape} does not match expected width {expected}"
        )


class Dense:
    """Affine map plus pointwise activation."""

    def __init__(self, w: np.ndarray, b: np.ndarray, activation: str = "identity"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.w = ad.param(w)
        self.b = ad.param(b)
        self.activation = activation

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, stream: RngStream) -> "Dense":
        w = _uniform_init(stream, in_dim, (in_dim, out_dim))
        return cls(w, np.zeros(out_dim), activation)

    @property
    def in_dim(self) -> int:
        return self.w.value.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w.value.shape[1]

    def __call__(self, x: ad.Var) -> ad.Var:
        _check_cols(x.value, self.in_dim, "dense layer")
        return ACTIVATIONS[self.activation](ad.add(ad.matmul(x, self.w), self.b))

    def params(self, prefix: str):
        # weight matrices take weight decay; biases do not
        return [(f"{prefix}.w", self.w, True), (f"{prefix}.b", self.b, False)]


def dense_forward(layer: Dense, x) -> np.ndarray:
    """Batch forward on a plain matrix; rows are samples."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return layer(ad.constant(x)).value


class VanillaCell:
    """h_t = tanh(W_h h_prev + W_x x_t + b)."""

    kind = "vanilla"

    def __init__(self, w_x, w_h, b):
        self.w_x = ad.param(w_x)
        self.w_h = ad.param(w_h)
        self.b = ad.param(b)

    @classmethod
    def init(cls, in_dim, hidden, stream):
        return cls(
            _uniform_init(stream.derive(0), in_dim, (in_dim, hidden)),
            _uniform_init(stream.derive(1), hidden, (hidden, hidden)),
            np.zeros(hidden),
        )

    @property
    def in_dim(self):
        return self.w_x.value.shape[0]

    @property
    def hidden(self):
        return self.w_h.value.shape[0]

    def initial_state(self, batch):
        return ad.constant(np.zeros((batch, self.hidden)))

    def step(self, x: ad.Var, h: ad.Var) -> ad.Var:
        pre = ad.add(ad.add(ad.matmul(x, self.w_x), ad.matmul(h, self.w_h)), self.b)
        return ad.tanh(pre)

    def params(self, prefix):
        return [
            (f"{prefix}.w_x", self.w_x, True),
            (f"{prefix}.w_h", self.w_h, True),
            (f"{prefix}.b", self.b, False),
        ]


class LstmCell:
    """Gated cell with memory; fused parameter blocks in gate order [i, f, o, c]."""

    kind = "lstm"

    def __init__(self, w, u, b):
        self.w = ad.param(w)  # (in, 4H)
        self.u = ad.param(u)  # (H, 4H)
        self.b = ad.param(b)  # (4H,)

    @classmethod
    def init(cls, in_dim, hidden, stream):
        return cls(
            _uniform_init(stream.derive(0), in_dim, (in_dim, 4 * hidden)),
            _uniform_init(stream.derive(1), hidden, (hidden, 4 * hidden)),
            np.zeros(4 * hidden),
        )

    @property
    def in_dim(self):
        return self.w.value.shape[0]

    @property
    def hidden(self):
        return self.u.value.shape[0]

    def initial_state(self, batch):
        z = np.zeros((batch, self.hidden))
        return (ad.constant(z), ad.constant(z.copy()))

    def step_detail(self, x: ad.Var, state) -> dict:
        h_prev, c_prev = state
        hid = self.hidden
        pre = ad.add(ad.add(ad.matmul(x, self.w), ad.matmul(h_prev, self.u)), self.b)
        i = ad.sigmoid(ad.narrow(pre, 1, 0, hid))
        f = ad.sigmoid(ad.narrow(pre, 1, hid, hid))
        o = ad.sigmoid(ad.narrow(pre, 1, 2 * hid, hid))
        c_cand = ad.tanh(ad.narrow(pre, 1, 3 * hid, hid))
        c = ad.add(ad.mul(f, c_prev), ad.mul(i, c_cand))
        h = ad.mul(o, ad.tanh(c))
        return {"i": i, "f": f, "o": o, "c_cand": c_cand, "c": c, "h": h}

    def step(self, x: ad.Var, state):
        d = self.step_detail(x, state)
        return (d["h"], d["c"])

    def params(self, prefix):
        return [
            (f"{prefix}.w", self.w, True),
            (f"{prefix}.u", self.u, True),
            (f"{prefix}.b", self.b, False),
        ]


class GruCell:
    """Two-gate cell; fused x-block in gate order [z, r, h]."""

    kind = "gru"

    def __init__(self, w, u_zr, u_h, b):
        self.w = ad.param(w)  # (in, 3H): z, r, cand
        self.u_zr = ad.param(u_zr)  # (H, 2H)
        self.u_h = ad.param(u_h)  # (H, H), applied to r*h_prev
        self.b = ad.param(b)  # (3H,)

    @classmethod
    def init(cls, in_dim, hidden, stream):
        return cls(
            _uniform_init(stream.derive(0), in_dim, (in_dim, 3 * hidden)),
            _uniform_init(stream.derive(1), hidden, (hidden, 2 * hidden)),
            _uniform_init(stream.derive(2), hidden, (hidden, hidden)),
            np.zeros(3 * hidden),
        )

    @property
    def in_dim(self):
        return self.w.value.shape[0]

    @property
    def hidden(self):
        return self.u_h.value.shape[0]

    def initial_state(self, batch):
        return ad.constant(np.zeros((batch, self.hidden)))

    def step_detail(self, x: ad.Var, h_prev: ad.Var) -> dict:
        hid = self.hidden
        x_pre = ad.add(ad.matmul(x, self.w), self.b)
        zr_pre = ad.add(ad.narrow(x_pre, 1, 0, 2 * hid), ad.matmul(h_prev, self.u_zr))
        z = ad.sigmoid(ad.narrow(zr_pre, 1, 0, hid))
        r = ad.sigmoid(ad.narrow(zr_pre, 1, hid, hid))
        cand_pre = ad.add(ad.narrow(x_pre, 1, 2 * hid, hid), ad.matmul(ad.mul(r, h_prev), self.u_h))
        h_cand = ad.tanh(cand_pre)
        h = ad.add(ad.mul(ad.sub(1.0, z), h_prev), ad.mul(z, h_cand))
        return {"z": z, "r": r, "h_cand": h_cand, "h": h}

    def step(self, x: ad.Var, h_prev: ad.Var) -> ad.Var:
        return self.step_detail(x, h_prev)["h"]

    def params(self, prefix):
        return [
            (f"{prefix}.w", self.w, True),
            (f"{prefix}.u_zr", self.u_zr, True),
            (f"{prefix}.u_h", self.u_h, True),
            (f"{prefix}.b", self.b, False),
        ]


CELL_KINDS = {"vanilla": VanillaCell, "lstm": LstmCell, "gru": GruCell}


def make_cell(kind: str, in_dim: int, hidden: int, stream: RngStream):
    if kind not in CELL_KINDS:
        raise ValueError(f"unknown cell kind {kind!r}")
    return CELL_KINDS[kind].init(in_dim, hidden, stream)


def _as_vec_var(v):
    arr = v.value if isinstance(v, ad.Var) else np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a vector, got shape {arr.shape}")
    if isinstance(v, ad.Var):
        return ad.reshape(v, (1, arr.size))
    return ad.constant(arr.reshape(1, -1))


def _state_to_var(cell, raw):
    if cell.kind == "lstm":
        h, c = (raw if isinstance(raw, tuple) else (raw, np.zeros_like(raw)))
        return (_as_vec_var(h), _as_vec_var(c))
    return _as_vec_var(raw)


def _state_to_vec(cell, state):
    if cell.kind == "lstm":
        return (state[0].value[0].copy(), state[1].value[0].copy())
    return state.value[0].copy()


def gru_step(cell: GruCell, x_t, h_prev) -> np.ndarray:
    """Single-sample step on plain vectors."""
    if cell.kind != "gru":
        raise ValueError("gru_step needs a gru cell")
    _check_cols(np.atleast_1d(np.asarray(x_t if not isinstance(x_t, ad.Var) else x_t.value)), cell.in_dim, "gru step")
    h = cell.step(_as_vec_var(x_t), _as_vec_var(h_prev))
    return h.value[0]


def lstm_step(cell: LstmCell, x_t, state) -> tuple:
    """Single-sample step on plain vectors; state is (h_prev, c_prev)."""
    if cell.kind != "lstm":
        raise ValueError("lstm_step needs an lstm cell")
    h_prev, c_prev = state
    h, c = cell.step(_as_vec_var(x_t), (_as_vec_var(h_prev), _as_vec_var(c_prev)))
    return h.value[0], c.value[0]


def unroll(cells, sequence, h0=None, return_state: bool = False):
    """Run one sequence (T, in) through a cell or stack of cells.

    Returns the stacked hidden states of the top cell, shape (T, hidden).
    Stacked cells each consume the full hidden sequence of the layer below.
    ``h0`` seeds the initial state: a vector (or (h, c) pair for LSTM) for
    the first cell, or a list with one entry per cell. With ``return_state``
    the per-cell final states come back as plain vectors, so a long sequence
    can be processed in chunks.
    """
    if not isinstance(cells, (list, tuple)):
        cells = [cells]
    seq_is_var = isinstance(sequence, ad.Var)
    arr = sequence.value if seq_is_var else np.asarray(sequence, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("empty sequence")
    T = arr.shape[0]

    if h0 is None:
        init = [cell.initial_state(1) for cell in cells]
    elif isinstance(h0, list):
        init = [_state_to_var(cell, raw) for cell, raw in zip(cells, h0)]
    else:
        init = [_state_to_var(cells[0], h0)] + [c.initial_state(1) for c in cells[1:]]

    rows = [ad.narrow(sequence, 0, t, 1) if seq_is_var else ad.constant(arr[t : t + 1]) for t in range(T)]
    finals = []
    for idx, cell in enumerate(cells):
        outputs = []
        state = init[idx]
        for t in range(T):
            state = cell.step(rows[t], state)
            outputs.append(state[0] if cell.kind == "lstm" else state)
        rows = outputs
        finals.append(_state_to_vec(cell, state))
    stacked = ad.concat(rows, axis=0)
    out = stacked if seq_is_var else stacked.value
    if return_state:
        return out, finals
    return out


class RnnStack:
    """Stacked recurrent layers with a batched sequence-to-one forward."""

    def __init__(self, cells):
        self.cells = list(cells)

    @classmethod
    def init(cls, kind, in_dim, hidden_sizes, stream):
        cells, prev = [], in_dim
        for i, h in enumerate(hidden_sizes):
            cells.append(make_cell(kind, prev, h, stream.derive(i)))
            prev = h
        return cls(cells)

    @property
    def in_dim(self):
        return self.cells[0].in_dim

    @property
    def out_dim(self):
        return self.cells[-1].hidden

    def forward_rows(self, rows) -> ad.Var:
        """Batched sequence-to-one over per-step (batch, features) nodes."""
        B = rows[0].value.shape[0]
        for cell in self.cells:
            state = cell.initial_state(B)
            outputs = []
            for row in rows:
                state = cell.step(row, state)
                outputs.append(state[0] if cell.kind == "lstm" else state)
            rows = outputs
        return rows[-1]

    def forward_last(self, X: np.ndarray) -> ad.Var:
        """(batch, steps, features) -> top-layer hidden at the last step."""
        B, T, F = X.shape
        _check_cols(X, self.in_dim, "rnn stack")
        return self.forward_rows([ad.constant(np.ascontiguousarray(X[:, t, :])) for t in range(T)])

    def params(self, prefix):
        out = []
        for i, cell in enumerate(self.cells):
            out.extend(cell.params(f"{prefix}.cell{i}"))
        return out


# -- standard gradient probes --------------------------------------------------


def _probe(unit, stream: RngStream):
    """Build (loss_fn, params) pinning random data and noise for a unit."""
    gen = stream.generator()
    if isinstance(unit, Dense):
        x = gen.normal(size=(4, unit.in_dim))
        y = gen.normal(size=(4, unit.out_dim))
        return (lambda: ad.mean_squared_error(unit(ad.constant(x)), ad.constant(y)),
                {n: p for n, p, _ in unit.params("dense")})
    if isinstance(unit, (VanillaCell, GruCell, LstmCell)):
        T = 5
        seq = gen.normal(size=(T, unit.in_dim))
        y = gen.normal(size=(T, unit.hidden))
        return (lambda: ad.mean_squared_error(unroll(unit, ad.constant(seq)), ad.constant(y)),
                {n: p for n, p, _ in unit.params("cell")})
    if isinstance(unit, RnnStack):
        T = 5
        X = gen.normal(size=(3, T, unit.in_dim))
        y = gen.normal(size=(3, unit.out_dim))
        return (lambda: ad.mean_squared_error(unit.forward_last(X), ad.constant(y)),
                {n: p for n, p, _ in unit.params("stack")})
    raise TypeError(f"no standard gradient probe for {type(unit).__name__}")


def grad_check(unit, tolerance: float = 1e-4, stream: RngStream | None = None,
               h: float = 1e-6) -> ad.GradCheckReport:
    """Check a unit's analytic gradients against central differences.

    Accepts a layer/cell/stack (a standard quadratic probe loss is built
    for it) or a zero-argument loss function paired with ``params`` via
    ``autodiff.grad_check`` directly.
    """
    stream = stream or RngStream(0)
    loss_fn, params = _probe(unit, stream)
    return ad.grad_check(loss_fn, params, tolerance=tolerance, h=h)
