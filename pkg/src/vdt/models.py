"""Model compositions: deterministic backbones capped by a variational linear map.

A regressor is (optional per-step dense encoder) -> (optional recurrent
stack) -> (dense trunk) -> variational output map -> (optional squash).
Named presets mirror the per-application architectures and training
settings; desk-scale tests build smaller instances through the same
factories.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .layers import ACTIVATIONS, Dense, RnnStack
from .numkit import RngStream
from .varlayer import IsotropicPrior, VariationalLinear


class VariationalRegressor:
    """Backbone stack with a Gaussian-posterior output map."""

    def __init__(self, pre: list[Dense], stack: RnnStack | None, trunk: list[Dense],
                 head: VariationalLinear, squash: str | None = None):
        if squash is not None and squash not in ACTIVATIONS:
            raise ValueError(f"unknown squash {squash!r}")
        self.pre = pre
        self.stack = stack
        self.trunk = trunk
        self.head = head
        self.squash = squash

    # -- forward ------------------------------------------------------------

    def features(self, X) -> ad.Var:
        """Deterministic features feeding the variational map.

        Dense models take (batch, features) -- as arrays or graph nodes, so
        they can sit inside a larger differentiable composition; recurrent
        models take (batch, steps, features) arrays and encode each step
        before the stack.
        """
        if self.stack is None:
            h = X if isinstance(X, ad.Var) else ad.constant(np.atleast_2d(np.asarray(X, dtype=np.float64)))
            for layer in self.pre + self.trunk:
                h = layer(h)
            return h
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3:
            raise ValueError(f"recurrent model expects (batch, steps, features), got {X.shape}")
        B, L, F = X.shape
        steps = ad.constant(np.ascontiguousarray(X.transpose(1, 0, 2)).reshape(L * B, F))
        for layer in self.pre:
            steps = layer(steps)
        rows = [ad.narrow(steps, 0, t * B, B) for t in range(L)]
        h = self.stack.forward_rows(rows)
        for layer in self.trunk:
            h = layer(h)
        return h

    def forward(self, X, eps: np.ndarray | None = None) -> ad.Var:
        out = self.head.forward(self.features(X), eps)
        if self.squash is not None:
            out = ACTIVATIONS[self.squash](out)
        return out

    def predict(self, X, stream: RngStream | None = None) -> np.ndarray:
        """Plain-array forward; a stream draws one theta, otherwise the mean is used."""
        eps = None if stream is None else stream.generator().standard_normal(self.head.n_params)
        return self.forward(X, eps).value

    # -- training hooks -------------------------------------------------------

    def draw_eps(self, stream: RngStream) -> np.ndarray:
        return stream.generator().standard_normal(self.head.n_params)

    def kl(self) -> ad.Var:
        return self.head.kl_term()

    def batch_loss(self, data, idx, stream: RngStream, config) -> ad.Var:
        X, y = data
        eps = self.draw_eps(stream)
        pred = self.forward(X[idx], eps)
        loss = ad.mean_squared_error(pred, ad.constant(y[idx]))
        if config.beta > 0:
            loss = ad.add(loss, ad.mul(self.kl(), config.beta))
        return loss

    # -- parameter access ------------------------------------------------------

    def params(self):
        out = []
        for i, layer in enumerate(self.pre):
            out.extend(layer.params(f"pre{i}"))
        if self.stack is not None:
            out.extend(self.stack.params("rnn"))
        for i, layer in enumerate(self.trunk):
            out.extend(layer.params(f"trunk{i}"))
        out.extend(self.head.params("head"))
        return out

    def param_dict(self) -> dict:
        return {name: var for name, var, _ in self.params()}


def make_dense_regressor(in_dim: int, hidden: list[int], out_dim: int, stream: RngStream,
                         activation: str = "relu", squash: str | None = None,
                         prior_sigma: float = 1.0) -> VariationalRegressor:
    layers, prev = [], in_dim
    for i, width in enumerate(hidden):
        layers.append(Dense.init(prev, width, activation, stream.derive(i)))
        prev = width
    head = VariationalLinear.init(prev, out_dim, stream.derive(999), IsotropicPrior(prior_sigma))
    return VariationalRegressor([], None, layers, head, squash)


def make_rnn_regressor(in_dim: int, out_dim: int, stream: RngStream, cell: str = "gru",
                       pre_hidden: list[int] = (), rnn_hidden: list[int] = (32,),
                       trunk_hidden: list[int] = (), activation: str = "relu",
                       prior_sigma: float = 1.0) -> VariationalRegressor:
    pre, prev = [], in_dim
    for i, width in enumerate(pre_hidden):
        pre.append(Dense.init(prev, width, activation, stream.derive(100 + i)))
        prev = width
    stack = RnnStack.init(cell, prev, list(rnn_hidden), stream.derive(200))
    prev = stack.out_dim
    trunk = []
    for i, width in enumerate(trunk_hidden):
        trunk.append(Dense.init(prev, width, activation, stream.derive(300 + i)))
        prev = width
    head = VariationalLinear.init(prev, out_dim, stream.derive(999), IsotropicPrior(prior_sigma))
    return VariationalRegressor(pre, stack, trunk, head)


#: Named architectures with their published training settings. ``input_dim``
#: stays configurable where the source material is ambiguous about it.
PRESETS = {
    "vfnn_chf": dict(
        kind="dense", in_dim=5, hidden=[100, 100, 100], out_dim=1,
        lr=1e-3, epochs=100, batch_size=32, weight_decay=1e-5, lr_schedule=(),
    ),
    "vrnn_psml": dict(
        kind="rnn", in_dim=2, pre_hidden=[35], rnn_hidden=[35], trunk_hidden=[35, 35],
        out_dim=2, cell="gru", lr=1e-3, epochs=50, batch_size=512, weight_decay=0.0,
        lr_schedule=(), clip_norm=5.0,
    ),
    "vrnn_httf": dict(
        kind="rnn", in_dim=2, pre_hidden=[], rnn_hidden=[48, 64, 32], trunk_hidden=[32],
        out_dim=2, cell="gru", lr=1.8e-4, epochs=50, batch_size=256, weight_decay=0.0,
        lr_schedule=(), clip_norm=5.0,
    ),
    # the physics-informed battery preset is constructed in vdt.pinn
    "vbattnn": dict(
        kind="battnn", lr=2e-2, epochs=1000, batch_size=10, weight_decay=5e-4,
        lr_schedule=((100, 0.5), (500, 0.5)),
    ),
}


def build_preset(name: str, stream: RngStream, **overrides) -> VariationalRegressor:
    """Instantiate a named dense/recurrent preset; overrides replace spec'd keys."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; options: {sorted(PRESETS)}")
    cfg = dict(PRESETS[name])
    cfg.update(overrides)
    kind = cfg.pop("kind")
    if kind == "dense":
        return make_dense_regressor(cfg["in_dim"], list(cfg["hidden"]), cfg["out_dim"],
                                    stream, prior_sigma=cfg.get("prior_sigma", 1.0))
    if kind == "rnn":
        return make_rnn_regressor(cfg["in_dim"], cfg["out_dim"], stream, cell=cfg.get("cell", "gru"),
                                  pre_hidden=list(cfg.get("pre_hidden", ())),
                                  rnn_hidden=list(cfg.get("rnn_hidden", (32,))),
                                  trunk_hidden=list(cfg.get("trunk_hidden", ())),
                                  prior_sigma=cfg.get("prior_sigma", 1.0))
    raise ValueError(f"preset {name!r} is not built by this factory")


def preset_train_settings(name: str) -> dict:
    """The published optimiser settings attached to a preset name."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}")
    cfg = PRESETS[name]
    keys = ("lr", "epochs", "batch_size", "weight_decay", "lr_schedule", "clip_norm")
    return {k: cfg[k] for k in keys if k in cfg}
