"""Experiment orchestration: the runnable studies behind the CLI commands.

Each function is pure given its arguments (seeds included) and returns
plain data structures; file emission and argument parsing stay in the CLI.
The acceptance suite drives these directly at its own sizes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .active import STRATEGIES, AalConfig, aggregate_trials, run_trial
from .layers import Dense, make_cell, unroll
from .metrics import compute
from .models import make_dense_regressor, make_rnn_regressor
from .numkit import RngStream, fit_scaler
from .pinn import BattNN, Mlp, PinnModel
from .sensorcat import build_signal, concat_order, downsample, signal_features
from .train import TrainConfig, fit
from .twinloop import make_sequences, rolling_update
from .varlayer import VariationalLinear, predict_with_ci


# -- gradient fidelity -----------------------------------------------------------


def _dense_probe(stream):
    unit = Dense.init(4, 3, "tanh", stream.derive(0))
    gen = stream.derive(1).generator()
    x, y = gen.normal(size=(4, 4)), gen.normal(size=(4, 3))
    loss = lambda: ad.mean_squared_error(unit(ad.constant(x)), ad.constant(y))
    return loss, {n: p for n, p, _ in unit.params("dense")}


def _cell_probe(kind):
    def probe(stream):
        unit = make_cell(kind, 2, 3, stream.derive(0))
        gen = stream.derive(1).generator()
        seq, y = gen.normal(size=(5, 2)), gen.normal(size=(5, 3))
        loss = lambda: ad.mean_squared_error(unroll(unit, ad.constant(seq)), ad.constant(y))
        return loss, {n: p for n, p, _ in unit.params(kind)}

    return probe


def _varlayer_probe(stream):
    unit = VariationalLinear.init(3, 2, stream.derive(0))
    gen = stream.derive(1).generator()
    x, y = gen.normal(size=(4, 3)), gen.normal(size=(4, 2))
    eps = gen.standard_normal(unit.n_params)

    def loss():
        pred = unit.forward(ad.constant(x), eps)
        return ad.add(ad.mean_squared_error(pred, ad.constant(y)),
                      ad.mul(unit.kl_term(), 1e-2))

    return loss, {"mu": unit.mu, "rho": unit.rho}


def _pinn_probe(stream):
    model = PinnModel(Mlp([3, 6, 2], stream.derive(0)), Mlp([2, 6, 1], stream.derive(1)),
                      dt=0.1)
    gen = stream.derive(2).generator()
    T = 10
    u = gen.normal(size=(T, 1))
    target = gen.normal(size=(1, T))
    x0 = gen.normal(size=(1, 2))

    def loss():
        x = ad.constant(x0)
        outs = []
        for n in range(T):
            outs.append(model.h(x))
            x = ad.add(x, ad.mul(model.f(x, u[n : n + 1]), model.dt))
        return ad.mean_squared_error(ad.concat(outs, axis=1), ad.constant(target))

    return loss, {n: p for n, p, _ in model.params()}


GRAD_UNITS = {
    "dense": _dense_probe,
    "vanilla_rnn": _cell_probe("vanilla"),
    "lstm": _cell_probe("lstm"),
    "gru": _cell_probe("gru"),
    "variational_layer": _varlayer_probe,
    "pinn_rollout": _pinn_probe,
}


def gradcheck_suite(seeds: int = 100, tolerance: float = 1e-4, h: float = 1e-6) -> list:
    """Central-difference verification of every differentiable unit.

    Returns one row per unit: worst relative error across `seeds` random
    instances and whether all stayed under the tolerance.
    """
    rows = []
    for name, probe in GRAD_UNITS.items():
        worst = 0.0
        ok = True
        for seed in range(seeds):
            loss_fn, params = probe(RngStream(seed, 97))
            report = ad.grad_check(loss_fn, params, tolerance=tolerance, h=h)
            worst = max(worst, report.worst())
            ok = ok and report.passed
        rows.append({"unit": name, "seeds": seeds, "max_rel_err": worst,
                     "tolerance": tolerance, "passed": ok})
    return rows


# -- tabular acquisition study ------------------------------------------------------


@dataclass(frozen=True)
class AcquisitionSettings:
    """Model family and per-iteration retraining budget."""

    hidden: tuple = (32, 32)
    epochs: int = 90
    batch_size: int = 48
    lr: float = 1e-2
    lr_schedule: tuple = ((60, 0.4),)
    beta: float = 1e-4

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           lr_schedule=self.lr_schedule, beta=self.beta)


def split_pool(X, y, seed: int, test_fraction: float = 0.2):
    """Standardise and carve the fixed holdout; returns (pool, test, scalers)."""
    xs, ys = fit_scaler(X), fit_scaler(y)
    Xs, Ys = xs.transform(X), ys.transform(y)
    perm = RngStream(seed, 13).generator().permutation(len(Xs))
    n_test = int(test_fraction * len(Xs))
    test_idx, pool_idx = perm[:n_test], perm[n_test:]
    return (Xs[pool_idx], Ys[pool_idx]), (Xs[test_idx], Ys[test_idx]), (xs, ys)


def _acquisition_worker(args):
    X, y, cfg_fields, settings, strategy, trial_seed = args
    cfg = AalConfig(**cfg_fields)
    settings = AcquisitionSettings(**settings)
    pool, test, _ = split_pool(X, y, seed=trial_seed)
    in_dim = X.shape[1]

    def factory(stream, dims=tuple(settings.hidden)):
        return make_dense_regressor(in_dim, list(dims), y.shape[1], stream)

    curve = run_trial(pool, test, cfg, strategy, factory, settings.train_config(),
                      trial_seed=trial_seed)
    return strategy, trial_seed, curve


def acquisition_study(X, y, cfg: AalConfig, settings: AcquisitionSettings,
                      trials: int | None = None, jobs: int = 1) -> dict:
    """Paired uncertainty-vs-random trials; returns curves and the summary.

    Trial t uses seed cfg.seed + t for both strategies (same pool split and
    initial labels), so the samples-to-target comparison is paired.
    """
    trials = cfg.trials if trials is None else trials
    cfg_fields = dict(initial_n=cfg.initial_n, per_iter=cfg.per_iter,
                      candidate_pool=cfg.candidate_pool, target_r2=cfg.target_r2,
                      trials=cfg.trials, max_pool=cfg.max_pool, seed=cfg.seed)
    settings_fields = dict(hidden=tuple(settings.hidden), epochs=settings.epochs,
                           batch_size=settings.batch_size, lr=settings.lr,
                           lr_schedule=tuple(settings.lr_schedule), beta=settings.beta)
    tasks = [(X, y, cfg_fields, settings_fields, strategy, cfg.seed + t)
             for t in range(trials) for strategy in STRATEGIES]
    results: dict = {s: {} for s in STRATEGIES}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for strategy, trial_seed, curve in pool.map(_acquisition_worker, tasks):
                results[strategy][trial_seed] = curve
    else:
        for task in tasks:
            strategy, trial_seed, curve = _acquisition_worker(task)
            results[strategy][trial_seed] = curve
    curves = {s: [results[s][k] for k in sorted(results[s])] for s in STRATEGIES}
    summary = {}
    for s in STRATEGIES:
        sizes = [c.final_size for c in curves[s]]
        summary[s] = {
            "mean_samples_to_target": float(np.mean(sizes)),
            "all_reached": bool(all(c.reached for c in curves[s])),
            "mean_final_r2": float(np.mean([c.r2[-1] for c in curves[s]])),
        }
    summary["ratio"] = (summary["aal"]["mean_samples_to_target"]
                        / summary["random"]["mean_samples_to_target"])
    return {"curves": curves, "summary": summary,
            "aggregates": {s: aggregate_trials(curves[s]) for s in STRATEGIES}}


# -- sensor concatenation study -------------------------------------------------------


@dataclass(frozen=True)
class SensorStudySettings:
    seq_len: int = 16
    horizon: int = 8  # steps ahead; far enough that persistence is not enough
    rnn_hidden: tuple = (24,)
    cell: str = "gru"
    epochs: int = 10
    batch_size: int = 64
    lr: float = 8e-3
    beta: float = 1e-4
    ci_samples: int = 30
    downsample_s: float | None = None
    bins: int = 10
    test_sensor_fraction: float = 0.25


def _signal_model_data(channels, settings: SensorStudySettings):
    if settings.downsample_s is not None:
        channels = [downsample(c, settings.downsample_s) for c in channels]
    return channels


def concat_signal_of(channels, bins: int):
    order = concat_order([c.values.mean() for c in channels], K=bins)
    return build_signal(channels, order)


def sensor_study(channels, settings: SensorStudySettings, seed: int,
                 keep_fraction: float = 1.0) -> dict:
    """Train on a fraction of sensors, score next-step prediction on held-out
    sensors' concatenated signal; returns metrics plus the built signals."""
    stream = RngStream(seed, 41)
    channels = _signal_model_data(channels, settings)
    n = len(channels)
    n_test = max(1, int(round(settings.test_sensor_fraction * n)))
    perm = stream.derive(0).generator().permutation(n)
    test_ids = [int(i) for i in perm[:n_test]]
    avail = [int(i) for i in perm[n_test:]]
    n_keep = max(1, int(round(keep_fraction * len(avail))))
    keep_ids = avail[:n_keep]

    train_signal = concat_signal_of([channels[i] for i in keep_ids], settings.bins)
    test_signal = concat_signal_of([channels[i] for i in test_ids], settings.bins)

    level = train_signal.values.mean()
    spread = train_signal.values.std() or 1.0

    def windows(signal):
        # forecast `horizon` steps past the window's end: persistence alone
        # cannot score well, so accuracy tracks how well the decay/transient
        # shapes learned from the training sensors transfer
        feats = signal_features(signal)
        feats[:, 0] = (feats[:, 0] - level) / spread
        L, H = settings.seq_len, settings.horizon
        count = len(feats) - L - H + 1
        if count < 1:
            raise ValueError("signal too short for the window and horizon")
        X = np.stack([feats[k : k + L] for k in range(count)])
        y = feats[L + H - 1 :, 0].reshape(-1, 1)
        return X, y

    X_train, y_train = windows(train_signal)
    X_test, y_test = windows(test_signal)
    model = make_rnn_regressor(2, 1, stream.derive(1), cell=settings.cell,
                               rnn_hidden=list(settings.rnn_hidden))
    cfg = TrainConfig(epochs=settings.epochs, batch_size=settings.batch_size,
                      lr=settings.lr, seed=seed, beta=settings.beta, clip_norm=5.0)
    result = fit(model, (X_train, y_train), cfg)
    summary = predict_with_ci(model, X_test, S=settings.ci_samples, stream=stream.derive(2))
    report = compute(y_test, summary.mean)
    coverage = float(np.mean((summary.lower <= y_test) & (y_test <= summary.upper)))
    return {
        "fraction": keep_fraction,
        "n_train_sensors": n_keep,
        "n_test_sensors": n_test,
        "r2": float(report.r2[0]),
        "mae": float(report.mae[0]),
        "rmse": float(report.rmse[0]),
        "width": float(np.mean(summary.width)),
        "coverage": coverage,
        "wall_s": result.wall_s,
        "train_signal": train_signal,
        "test_signal": test_signal,
        "test_truth": y_test,
        "test_summary": summary,
    }


def dropout_sweep(channels, settings: SensorStudySettings, seed: int,
                  fractions=(1.0, 0.5, 0.1)) -> list:
    """The sensor-availability sweep at one seed; rows keep CSV-ready scalars."""
    rows = []
    for frac in fractions:
        res = sensor_study(channels, settings, seed, keep_fraction=frac)
        rows.append({k: res[k] for k in ("fraction", "n_train_sensors", "n_test_sensors",
                                         "r2", "mae", "rmse", "width", "coverage", "wall_s")})
    return rows


def joint_sensor_study(groups: dict, settings: SensorStudySettings, seed: int) -> dict:
    """The two-quantity wiring: both concatenated signals feed one model.

    Each quantity is ordered by its own means; the signals are truncated to
    a common length, stacked as two input channels, and the model forecasts
    both channels `horizon` steps ahead.
    """
    stream = RngStream(seed, 43)
    names = sorted(groups)
    if len(names) != 2:
        raise ValueError("joint wiring expects exactly two quantity groups")
    signals = []
    for name in names:
        chans = _signal_model_data(groups[name], settings)
        signals.append(concat_signal_of(chans, settings.bins))
    n = min(len(s) for s in signals)
    raw = np.column_stack([s.values[:n] for s in signals])
    scal = fit_scaler(raw)
    feats = scal.transform(raw)
    L, H = settings.seq_len, settings.horizon
    count = len(feats) - L - H + 1
    X = np.stack([feats[k : k + L] for k in range(count)])
    y = feats[L + H - 1 :, :]
    split = int(0.75 * count)
    model = make_rnn_regressor(2, 2, stream.derive(1), cell=settings.cell,
                               rnn_hidden=list(settings.rnn_hidden))
    cfg = TrainConfig(epochs=settings.epochs, batch_size=settings.batch_size,
                      lr=settings.lr, seed=seed, beta=settings.beta, clip_norm=5.0)
    result = fit(model, (X[:split], y[:split]), cfg)
    summary = predict_with_ci(model, X[split:], S=settings.ci_samples, stream=stream.derive(2))
    truth = y[split:]
    report = compute(truth, summary.mean)
    coverage = float(np.mean((summary.lower <= truth) & (truth <= summary.upper)))
    return {
        "quantities": names,
        "r2": [float(v) for v in report.r2],
        "mae": [float(v) for v in report.mae],
        "rmse": [float(v) for v in report.rmse],
        "width": float(np.mean(summary.width)),
        "coverage": coverage,
        "wall_s": result.wall_s,
        "signals": dict(zip(names, signals)),
    }


# -- battery study ----------------------------------------------------------------------


@dataclass(frozen=True)
class BatterySettings:
    block: int = 10
    static_budgets: tuple = (30, 60, 150)
    epochs_initial: int = 150
    epochs_update: int = 30
    epochs_static: int = 100
    lr_initial: float = 3e-2
    lr_update: float = 1e-2
    weight_decay: float = 5e-4
    beta: float = 1e-4
    ci_samples: int = 16
    vb_bias: float = 3.7
    rsp_init: float = 3.0


def _fresh_battnn(stream, dt, settings: BatterySettings) -> BattNN:
    return BattNN.init(stream, dt=dt, vb_bias=settings.vb_bias, rsp_init=settings.rsp_init)


def battery_study(profiles, settings: BatterySettings, seed: int) -> dict:
    """Rolling fine-tune vs static budgets, scored on the common post-budget tail.

    All models are evaluated on the discharges after the largest static
    budget; the rolling model's tail forecasts were each made before it
    trained on that block, so the comparison is causal for every entry.
    """
    n = len(profiles)
    tail_start = max(settings.static_budgets)
    if tail_start + settings.block > n:
        raise ValueError("need profiles beyond the largest static budget")
    dt = profiles[0].dt
    root = RngStream(seed, 59)

    model = _fresh_battnn(root.derive(0), dt, settings)
    init_cfg = TrainConfig(epochs=settings.epochs_initial, batch_size=settings.block,
                           lr=settings.lr_initial, seed=seed, beta=settings.beta,
                           weight_decay=settings.weight_decay,
                           lr_schedule=((settings.epochs_initial // 2, 0.5),))
    update_cfg = TrainConfig(epochs=settings.epochs_update, batch_size=settings.block,
                             lr=settings.lr_update, seed=seed, beta=settings.beta,
                             weight_decay=settings.weight_decay)
    block_records = rolling_update(profiles, model, update_cfg, block=settings.block,
                                   ci_samples=settings.ci_samples,
                                   initial_config=init_cfg)
    records = [{"block": r.block, "first_discharge": r.profile_indices[0],
                "mse": r.mse, "rmse": r.rmse, "mape": r.mape,
                "coverage": r.coverage, "width": r.width,
                "trained_blocks": list(r.trained_blocks)} for r in block_records]

    tail = [r for r in records if r["first_discharge"] >= tail_start]
    rolling_mse = float(np.mean([r["mse"] for r in tail]))

    tail_ids = list(range(tail_start, n))
    statics = {}
    for budget in settings.static_budgets:
        m = _fresh_battnn(root.derive(10_000 + budget), dt, settings)
        cfg = TrainConfig(epochs=settings.epochs_static, batch_size=settings.block,
                          lr=settings.lr_initial, seed=seed + 1, beta=settings.beta,
                          weight_decay=settings.weight_decay,
                          lr_schedule=((settings.epochs_static * 3 // 5, 0.5),))
        fit(m, profiles[:budget], cfg)
        report, coverage, width, _, _ = evaluate_profiles(
            m, profiles, tail_ids, root.derive(20_000 + budget), settings.ci_samples)
        statics[budget] = {"mse": float(report.mse[0]), "rmse": float(report.rmse[0]),
                           "mape": float(report.mape[0]), "coverage": coverage,
                           "width": width}
    best_static = min(s["mse"] for s in statics.values())
    return {
        "records": records,
        "statics": statics,
        "rolling_tail_mse": rolling_mse,
        "best_static_mse": best_static,
        "ratio": rolling_mse / best_static,
    }
