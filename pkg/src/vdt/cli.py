"""Command-line entry point.

    vdt <train|active-learn|sessions|concat-sensors|battery|synth|gradcheck>
        --config FILE [--seed N] [--out DIR] [--jobs N]

Configuration is a flat key = value text file ('#' starts a comment); every
command documents its keys in README.md and echoes the fully resolved set
(defaults included) into its run directory, which is named by seed and
config hash so a run can be reproduced from its artifacts alone. The seed
resolves as --seed flag > VDT_SEED environment variable > config file.
Errors exit nonzero after printing a single "vdt-error: reason" line.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time

import numpy as np

from .active import AalConfig
from .dataio import (
    DataError,
    load_battery_csv,
    load_sensor_csv,
    load_table,
    write_battery_csv,
    write_csv,
    write_json,
    write_matrix_csv,
    write_rows_csv,
    write_sensor_csv,
)
from .experiments import (
    AcquisitionSettings,
    BatterySettings,
    SensorStudySettings,
    acquisition_study,
    battery_study,
    dropout_sweep,
    gradcheck_suite,
    joint_sensor_study,
    sensor_study,
)
from .metrics import attach_interval, compute
from .models import build_preset, make_dense_regressor, make_rnn_regressor, preset_train_settings
from .numkit import RngStream, fit_scaler
from .sensorcat import SensorSeries
from .synth import (
    CHF_COLUMNS,
    GRID_COLUMNS,
    SynthSpec,
    chf_like,
    degrading_cell,
    seasonal_grid,
    sensor_field,
)
from .train import TrainConfig, fit, save_checkpoint
from .twinloop import SessionPlan, run_sessions
from .varlayer import predict_with_ci
from . import figures

COMMANDS = ("train", "active-learn", "sessions", "concat-sensors", "battery",
            "synth", "gradcheck")


class CliError(Exception):
    pass


# -- configuration ---------------------------------------------------------------


def parse_config_text(text: str) -> dict:
    """Flat `key = value` lines; '#' comments; later keys override earlier."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _bool(s: str) -> bool:
    if s.lower() in ("true", "yes", "1", "on"):
        return True
    if s.lower() in ("false", "no", "0", "off"):
        return False
    raise CliError(f"expected a boolean, got {s!r}")


def _int_list(s: str) -> tuple:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _float_list(s: str) -> tuple:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _str_list(s: str) -> tuple:
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _schedule(s: str) -> tuple:
    # "100:0.5,500:0.5" -> ((100, 0.5), (500, 0.5))
    if not s.strip():
        return ()
    pairs = []
    for item in s.split(","):
        epoch, mult = item.split(":")
        pairs.append((int(epoch), float(mult)))
    return tuple(pairs)


SCHEMAS = {
    "train": {
        "dataset": (str, "synth:chf_like"),
        "features": (_str_list, ()),
        "targets": (_str_list, ()),
        "preset": (str, "custom"),
        "hidden": (_int_list, (32, 32)),
        "cell": (str, "gru"),
        "pre_hidden": (_int_list, ()),
        "rnn_hidden": (_int_list, (16,)),
        "trunk_hidden": (_int_list, ()),
        "epochs": (int, 150),
        "batch_size": (int, 48),
        "lr": (float, 1e-2),
        "lr_schedule": (_schedule, ()),
        "weight_decay": (float, 0.0),
        "beta": (float, 1e-4),
        "clip_norm": (float, 0.0),
        "test_fraction": (float, 0.2),
        "seq_len": (int, 12),
        "train_window": (int, 400),
        "test_window": (int, 200),
        "ci_samples": (int, 200),
        "synth_n": (int, 2500),
        "synth_noise": (float, 0.05),
        "seed": (int, 0),
    },
    "active-learn": {
        "dataset": (str, "synth:chf_like"),
        "features": (_str_list, ()),
        "targets": (_str_list, ()),
        "synth_n": (int, 2500),
        "synth_noise": (float, 0.05),
        "initial_n": (int, 10),
        "per_iter": (int, 20),
        "candidate_pool": (int, 500),
        "target_r2": (float, 0.95),
        "trials": (int, 20),
        "hidden": (_int_list, (32, 32)),
        "epochs": (int, 90),
        "batch_size": (int, 48),
        "lr": (float, 1e-2),
        "lr_schedule": (_schedule, ((60, 0.4),)),
        "beta": (float, 1e-4),
        "seed": (int, 0),
    },
    "sessions": {
        "dataset": (str, "synth:seasonal_grid"),
        "features": (_str_list, ()),
        "targets": (_str_list, ()),
        "synth_n": (int, 5100),
        "synth_noise": (float, 0.02),
        "seq_len": (int, 12),
        "train_window": (int, 400),
        "test_window": (int, 200),
        "sessions": (int, 12),
        "cell": (str, "gru"),
        "rnn_hidden": (_int_list, (16,)),
        "epochs": (int, 10),
        "batch_size": (int, 64),
        "lr": (float, 5e-3),
        "beta": (float, 1e-4),
        "clip_norm": (float, 5.0),
        "ci_samples": (int, 50),
        "baseline": (_bool, False),
        "seed": (int, 0),
    },
    "concat-sensors": {
        "dataset": (str, "synth:sensor_field"),
        "prefixes": (_str_list, ("TS_", "TF_")),
        "quantity": (str, "TS_"),
        "wiring": (str, "aux"),
        "synth_sensors": (int, 18),
        "synth_steps": (int, 400),
        "synth_noise": (float, 0.03),
        "downsample_s": (float, 0.0),
        "bins": (int, 10),
        "seq_len": (int, 16),
        "horizon": (int, 8),
        "cell": (str, "gru"),
        "rnn_hidden": (_int_list, (24,)),
        "epochs": (int, 12),
        "batch_size": (int, 64),
        "lr": (float, 8e-3),
        "beta": (float, 1e-4),
        "ci_samples": (int, 30),
        "test_sensor_fraction": (float, 0.25),
        "sweep": (_bool, False),
        "fractions": (_float_list, (1.0, 0.5, 0.1)),
        "seed": (int, 0),
    },
    "battery": {
        "dataset": (str, "synth:degrading_cell"),
        "synth_n": (int, 170),
        "synth_steps": (int, 50),
        "synth_drift": (float, 0.01),
        "synth_noise": (float, 0.05),
        "block": (int, 10),
        "static_budgets": (_int_list, (30, 60, 150)),
        "epochs_initial": (int, 150),
        "epochs_update": (int, 30),
        "epochs_static": (int, 100),
        "lr_initial": (float, 3e-2),
        "lr_update": (float, 1e-2),
        "weight_decay": (float, 5e-4),
        "beta": (float, 1e-4),
        "ci_samples": (int, 16),
        "vb_bias": (float, 3.7),
        "rsp_init": (float, 3.0),
        "seed": (int, 0),
    },
    "synth": {
        "kind": (str, "chf_like"),
        "n": (int, 2500),
        "noise": (float, 0.05),
        "sensors": (int, 18),
        "steps": (int, 80),
        "drift": (float, 0.01),
        "seed": (int, 0),
    },
    "gradcheck": {
        "seeds": (int, 20),
        "tolerance": (float, 1e-4),
        "seed": (int, 0),
    },
}


def resolve_config(command: str, raw: dict, seed_override: int | None) -> dict:
    schema = SCHEMAS[command]
    unknown = sorted(set(raw) - set(schema) - {"out"})
    if unknown:
        raise CliError(f"unknown config keys for {command}: {', '.join(unknown)}")
    resolved = {}
    for key, (cast, default) in schema.items():
        if key in raw:
            try:
                resolved[key] = cast(raw[key])
            except (ValueError, CliError) as exc:
                raise CliError(f"config key {key}: {exc}") from exc
        else:
            resolved[key] = default
    env_seed = os.environ.get("VDT_SEED")
    if env_seed is not None:
        resolved["seed"] = int(env_seed)
    if seed_override is not None:
        resolved["seed"] = seed_override
    return resolved


def _config_lines(resolved: dict) -> str:
    def fmt(v):
        if isinstance(v, tuple):
            if v and isinstance(v[0], tuple):
                return ",".join(f"{e}:{m}" for e, m in v)
            return ",".join(str(x) for x in v)
        return str(v)

    return "\n".join(f"{k} = {fmt(v)}" for k, v in sorted(resolved.items())) + "\n"


def make_run_dir(base, command: str, resolved: dict) -> str:
    text = _config_lines(resolved)
    digest = hashlib.sha256(text.encode()).hexdigest()[:8]
    run_dir = os.path.join(base, f"{command}-seed{resolved['seed']}-{digest}")
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config_resolved.txt.tmp"), "w") as f:
        f.write(text)
    os.replace(os.path.join(run_dir, "config_resolved.txt.tmp"),
               os.path.join(run_dir, "config_resolved.txt"))
    return run_dir


# -- dataset plumbing --------------------------------------------------------------


def _dataset_kind(dataset: str) -> tuple:
    if dataset.startswith("synth:"):
        kind = dataset.split(":", 1)[1]
        return "synth", kind
    return "file", dataset


def _load_tabular(cfg) -> tuple:
    source, name = _dataset_kind(cfg["dataset"])
    if source == "synth":
        if name != "chf_like":
            raise CliError(f"tabular commands need synth:chf_like, got {cfg['dataset']}")
        return chf_like(SynthSpec("chf_like", n=cfg["synth_n"], seed=cfg["seed"],
                                  noise=cfg["synth_noise"]))
    features = list(cfg["features"]) or list(CHF_COLUMNS[:-1])
    targets = list(cfg["targets"]) or [CHF_COLUMNS[-1]]
    table = load_table(name, features, targets, kind="tabular")
    return table.X, table.y


def _load_series(cfg) -> tuple:
    """(series matrix, target column indices)."""
    source, name = _dataset_kind(cfg["dataset"])
    if source == "synth":
        if name != "seasonal_grid":
            raise CliError(f"series commands need synth:seasonal_grid, got {cfg['dataset']}")
        series = seasonal_grid(SynthSpec("seasonal_grid", n=cfg["synth_n"],
                                         seed=cfg["seed"], noise=cfg["synth_noise"]))
        targets = [GRID_COLUMNS.index("solar"), GRID_COLUMNS.index("wind")]
        return series, targets
    if not cfg["features"] or not cfg["targets"]:
        raise CliError("CSV series need explicit `features` and `targets` columns")
    columns = list(cfg["features"]) + list(cfg["targets"])
    table = load_table(name, columns, [], kind="timeseries")
    targets = [columns.index(t) for t in cfg["targets"]]
    return table.X, targets


def _load_sensor_groups(cfg) -> dict:
    source, name = _dataset_kind(cfg["dataset"])
    if source == "synth":
        if name != "sensor_field":
            raise CliError(f"concat-sensors needs synth:sensor_field, got {cfg['dataset']}")
        channels = sensor_field(SynthSpec("sensor_field", n=1, seed=cfg["seed"],
                                          sensors=cfg["synth_sensors"],
                                          noise=cfg["synth_noise"]),
                                steps=cfg["synth_steps"])
        groups = {}
        for prefix in cfg["prefixes"]:
            groups[prefix] = [SensorSeries(c.sensor_id, c.timestamps, c.values)
                              for c in channels if c.sensor_id.startswith(prefix)]
        return groups
    return load_sensor_csv(name, prefixes=cfg["prefixes"])


def _load_profiles(cfg) -> list:
    source, name = _dataset_kind(cfg["dataset"])
    if source == "synth":
        if name != "degrading_cell":
            raise CliError(f"battery needs synth:degrading_cell, got {cfg['dataset']}")
        return degrading_cell(SynthSpec("degrading_cell", n=cfg["synth_n"],
                                        seed=cfg["seed"], noise=cfg["synth_noise"],
                                        steps=cfg["synth_steps"], drift=cfg["synth_drift"]))
    return load_battery_csv(name)


def _series_model_factory(cfg, in_dim, out_dim):
    def factory(stream):
        return make_rnn_regressor(in_dim, out_dim, stream, cell=cfg["cell"],
                                  rnn_hidden=list(cfg["rnn_hidden"]))

    return factory


# -- commands -----------------------------------------------------------------------


def cmd_train(cfg, run_dir, jobs):
    source, name = _dataset_kind(cfg["dataset"])
    is_series = (source == "synth" and name == "seasonal_grid") or (
        source == "file" and cfg["features"] and cfg["targets"] and cfg["preset"].startswith("vrnn"))
    if is_series:
        return _train_series(cfg, run_dir)
    return _train_tabular(cfg, run_dir)


def _build_model(cfg, in_dim, out_dim, stream):
    if cfg["preset"] != "custom":
        return build_preset(cfg["preset"], stream, in_dim=in_dim, out_dim=out_dim)
    return make_dense_regressor(in_dim, list(cfg["hidden"]), out_dim, stream)


def _train_tabular(cfg, run_dir):
    X, y = _load_tabular(cfg)
    xs, ys = fit_scaler(X), fit_scaler(y)
    Xs, Ys = xs.transform(X), ys.transform(y)
    seed = cfg["seed"]
    perm = RngStream(seed, 13).generator().permutation(len(Xs))
    n_test = int(cfg["test_fraction"] * len(Xs))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    model = _build_model(cfg, X.shape[1], y.shape[1], RngStream(seed, 17))
    settings = dict(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                    lr_schedule=cfg["lr_schedule"], weight_decay=cfg["weight_decay"])
    if cfg["preset"] != "custom":
        settings.update(preset_train_settings(cfg["preset"]))
        settings.pop("clip_norm", None)
    tc = TrainConfig(epochs=settings["epochs"], batch_size=settings["batch_size"],
                     lr=settings["lr"], lr_schedule=tuple(settings.get("lr_schedule", ())),
                     seed=seed, beta=cfg["beta"],
                     clip_norm=cfg["clip_norm"] or None,
                     weight_decay=settings.get("weight_decay", 0.0))
    t0 = time.perf_counter()
    fit(model, (Xs[train_idx], Ys[train_idx]), tc)
    summary = predict_with_ci(model, Xs[test_idx], S=cfg["ci_samples"],
                              stream=RngStream(seed, 19))
    wall = time.perf_counter() - t0
    truth = y[test_idx]
    mean = ys.inverse(summary.mean)
    lower = ys.inverse(summary.lower)
    upper = ys.inverse(summary.upper)
    report = compute(truth, mean)
    report.ci_coverage = float(np.mean((lower <= truth) & (truth <= upper)))
    report.mean_ci_width = float(np.mean(upper - lower))
    payload = report.scalars()
    payload["wall_s"] = wall
    write_json(os.path.join(run_dir, "metrics.json"), payload)
    header = ["row"]
    for j in range(truth.shape[1]):
        header += [f"truth_y{j}", f"mean_y{j}", f"lower_y{j}", f"upper_y{j}"]
    rows = np.column_stack([test_idx] + [c for j in range(truth.shape[1])
                                         for c in (truth[:, j], mean[:, j], lower[:, j], upper[:, j])])
    write_matrix_csv(os.path.join(run_dir, "predictions.csv"), header, rows)
    save_checkpoint(model, os.path.join(run_dir, "model.vdtc"))
    order = np.argsort(test_idx)
    figures.save_fit_figure(os.path.join(run_dir, "fit.png"), truth[order], mean[order],
                            lower[order], upper[order], title="held-out predictions")
    return payload


def _train_series(cfg, run_dir):
    series, targets = _load_series(cfg)
    plan = SessionPlan(seq_len=cfg["seq_len"], train_window=cfg["train_window"],
                       test_window=cfg["test_window"], sessions=1)
    tc = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                     lr_schedule=cfg["lr_schedule"], seed=cfg["seed"], beta=cfg["beta"],
                     clip_norm=cfg["clip_norm"] or None, weight_decay=cfg["weight_decay"])
    logs = run_sessions(series, targets, plan, tc,
                        _series_model_factory(cfg, series.shape[1], len(targets)),
                        run_dir, ci_samples=cfg["ci_samples"])
    log = logs[0]
    payload = dict(log.metrics)
    payload["wall_s"] = log.train_wall_s + log.infer_wall_s
    write_json(os.path.join(run_dir, "metrics.json"), payload)
    write_rows_csv(os.path.join(run_dir, "sessions.csv"), [l.csv_row() for l in logs])
    figures.save_session_figure(os.path.join(run_dir, "sessions.png"), logs)
    return payload


def cmd_active_learn(cfg, run_dir, jobs):
    X, y = _load_tabular(cfg)
    aal_cfg = AalConfig(initial_n=cfg["initial_n"], per_iter=cfg["per_iter"],
                        candidate_pool=cfg["candidate_pool"], target_r2=cfg["target_r2"],
                        trials=cfg["trials"], seed=cfg["seed"])
    settings = AcquisitionSettings(hidden=tuple(cfg["hidden"]), epochs=cfg["epochs"],
                                   batch_size=cfg["batch_size"], lr=cfg["lr"],
                                   lr_schedule=cfg["lr_schedule"], beta=cfg["beta"])
    study = acquisition_study(X, y, aal_cfg, settings, jobs=jobs)
    rows = []
    for strategy, curves in study["curves"].items():
        for trial, curve in enumerate(curves):
            for i, size in enumerate(curve.sizes):
                rows.append({"strategy": strategy, "trial": trial, "iteration": i,
                             "size": size, "r2": curve.r2[i],
                             "cum_seconds": curve.cum_seconds[i]})
    write_rows_csv(os.path.join(run_dir, "curves.csv"), rows)
    payload = {"summary": study["summary"],
               "aggregates": study["aggregates"]}
    write_json(os.path.join(run_dir, "aggregate.json"), payload)
    figures.save_learning_curves(os.path.join(run_dir, "learning_curves.png"),
                                 study["aggregates"])
    figures.save_cumulative_time(os.path.join(run_dir, "cumulative_time.png"),
                                 study["curves"])
    return study["summary"]


def cmd_sessions(cfg, run_dir, jobs):
    series, targets = _load_series(cfg)
    plan = SessionPlan(seq_len=cfg["seq_len"], train_window=cfg["train_window"],
                       test_window=cfg["test_window"], sessions=cfg["sessions"])
    tc = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                     seed=cfg["seed"], beta=cfg["beta"], clip_norm=cfg["clip_norm"] or None)
    factory = _series_model_factory(cfg, series.shape[1], len(targets))
    logs = run_sessions(series, targets, plan, tc, factory,
                        os.path.join(run_dir, "checkpoints"), mode="rolling",
                        ci_samples=cfg["ci_samples"])
    write_rows_csv(os.path.join(run_dir, "sessions.csv"), [l.csv_row() for l in logs])
    baseline_logs = None
    if cfg["baseline"]:
        baseline_logs = run_sessions(series, targets, plan, tc, factory,
                                     os.path.join(run_dir, "baseline_checkpoints"),
                                     mode="cumulative", ci_samples=cfg["ci_samples"])
        write_rows_csv(os.path.join(run_dir, "sessions_cumulative.csv"),
                       [l.csv_row() for l in baseline_logs])
    summary = {
        "train_wall_s": [l.train_wall_s for l in logs],
        "max_over_first_wall": max(l.train_wall_s for l in logs) / logs[0].train_wall_s,
        "final_metrics": logs[-1].metrics,
    }
    if baseline_logs:
        summary["baseline_final_over_first_wall"] = (
            baseline_logs[-1].train_wall_s / baseline_logs[0].train_wall_s)
    write_json(os.path.join(run_dir, "summary.json"), summary)
    figures.save_session_figure(os.path.join(run_dir, "sessions.png"), logs, baseline_logs)
    return summary


def cmd_concat_sensors(cfg, run_dir, jobs):
    groups = _load_sensor_groups(cfg)
    settings = SensorStudySettings(
        seq_len=cfg["seq_len"], horizon=cfg["horizon"], rnn_hidden=tuple(cfg["rnn_hidden"]),
        cell=cfg["cell"], epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
        beta=cfg["beta"], ci_samples=cfg["ci_samples"],
        downsample_s=cfg["downsample_s"] or None, bins=cfg["bins"],
        test_sensor_fraction=cfg["test_sensor_fraction"],
    )
    if cfg["wiring"] == "joint":
        res = joint_sensor_study(groups, settings, cfg["seed"])
        payload = {k: res[k] for k in ("quantities", "r2", "mae", "rmse", "width",
                                       "coverage", "wall_s")}
        for name, signal in res["signals"].items():
            _emit_signal(run_dir, name, signal)
        write_json(os.path.join(run_dir, "metrics.json"), payload)
        return payload
    if cfg["wiring"] != "aux":
        raise CliError(f"wiring must be 'aux' or 'joint', got {cfg['wiring']!r}")
    channels = groups.get(cfg["quantity"])
    if not channels:
        raise CliError(f"no sensors under prefix {cfg['quantity']!r}")
    if cfg["sweep"]:
        rows = dropout_sweep(channels, settings, cfg["seed"], fractions=cfg["fractions"])
        write_rows_csv(os.path.join(run_dir, "dropout.csv"), rows)
        figures.save_dropout_figure(os.path.join(run_dir, "dropout.png"), rows)
        full = max(rows, key=lambda r: r["fraction"])
        least = min(rows, key=lambda r: r["fraction"])
        payload = {"rows": rows,
                   "r2_drop": full["r2"] - least["r2"],
                   "width_growth": least["width"] - full["width"]}
        write_json(os.path.join(run_dir, "metrics.json"), payload)
        return payload
    res = sensor_study(channels, settings, cfg["seed"])
    _emit_signal(run_dir, cfg["quantity"].rstrip("_"), res["train_signal"])
    payload = {k: res[k] for k in ("fraction", "n_train_sensors", "n_test_sensors",
                                   "r2", "mae", "rmse", "width", "coverage", "wall_s")}
    write_json(os.path.join(run_dir, "metrics.json"), payload)
    figures.save_fit_figure(os.path.join(run_dir, "test_predictions.png"),
                            res["test_truth"], res["test_summary"].mean,
                            res["test_summary"].lower, res["test_summary"].upper,
                            title="held-out sensor forecasts")
    return payload


def _emit_signal(run_dir, name, signal):
    write_rows_csv(os.path.join(run_dir, f"order_{name}.csv"),
                   [{"position": i, "sensor_id": sid}
                    for i, sid in enumerate(signal.order)])
    write_matrix_csv(os.path.join(run_dir, f"signal_{name}.csv"),
                     ["step", "value"],
                     np.column_stack([np.arange(len(signal.values)), signal.values]))
    figures.save_signal_figure(os.path.join(run_dir, f"signal_{name}.png"), signal,
                               title=f"concatenated {name} signal")


def cmd_battery(cfg, run_dir, jobs):
    profiles = _load_profiles(cfg)
    settings = BatterySettings(
        block=cfg["block"], static_budgets=tuple(cfg["static_budgets"]),
        epochs_initial=cfg["epochs_initial"], epochs_update=cfg["epochs_update"],
        epochs_static=cfg["epochs_static"], lr_initial=cfg["lr_initial"],
        lr_update=cfg["lr_update"], weight_decay=cfg["weight_decay"], beta=cfg["beta"],
        ci_samples=cfg["ci_samples"], vb_bias=cfg["vb_bias"], rsp_init=cfg["rsp_init"],
    )
    study = battery_study(profiles, settings, cfg["seed"])
    rows = [dict(r, trained_blocks="|".join(map(str, r["trained_blocks"])))
            for r in study["records"]]
    write_rows_csv(os.path.join(run_dir, "blocks.csv"), rows)
    write_rows_csv(os.path.join(run_dir, "statics.csv"),
                   [dict({"budget": b}, **v) for b, v in sorted(study["statics"].items())])
    summary = {k: study[k] for k in ("rolling_tail_mse", "best_static_mse", "ratio")}
    write_json(os.path.join(run_dir, "summary.json"), summary)

    class _R:  # adapt dict records for the figure helper
        def __init__(self, d):
            self.block = d["block"]
            self.mse = d["mse"]

    figures.save_battery_figure(os.path.join(run_dir, "battery.png"),
                                [_R(r) for r in study["records"]],
                                {b: v["mse"] for b, v in study["statics"].items()})
    return summary


def cmd_synth(cfg, run_dir, jobs):
    kind = cfg["kind"]
    spec = SynthSpec(kind, n=cfg["n"], seed=cfg["seed"], noise=cfg["noise"],
                     sensors=cfg["sensors"], steps=cfg["steps"], drift=cfg["drift"])
    path = os.path.join(run_dir, f"{kind}.csv")
    if kind == "chf_like":
        X, y = chf_like(spec)
        write_matrix_csv(path, CHF_COLUMNS, np.column_stack([X, y]))
    elif kind == "seasonal_grid":
        write_matrix_csv(path, GRID_COLUMNS, seasonal_grid(spec))
    elif kind == "sensor_field":
        write_sensor_csv(path, sensor_field(spec, steps=cfg["steps"]))
    elif kind == "degrading_cell":
        write_battery_csv(path, degrading_cell(spec))
    else:
        raise CliError(f"unknown synthetic kind {kind!r}")
    return {"written": path}


def cmd_gradcheck(cfg, run_dir, jobs):
    rows = gradcheck_suite(seeds=cfg["seeds"], tolerance=cfg["tolerance"])
    write_rows_csv(os.path.join(run_dir, "gradcheck.csv"), rows)
    for row in rows:
        status = "pass" if row["passed"] else "FAIL"
        print(f"{row['unit']:20s} max_rel_err={row['max_rel_err']:.3e} "
              f"tol={row['tolerance']:g} {status}")
    if not all(r["passed"] for r in rows):
        raise CliError("gradient check failed; see gradcheck.csv")
    return {"units": len(rows), "all_passed": True}


HANDLERS = {
    "train": cmd_train,
    "active-learn": cmd_active_learn,
    "sessions": cmd_sessions,
    "concat-sensors": cmd_concat_sensors,
    "battery": cmd_battery,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vdt", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="overrides config and VDT_SEED")
    parser.add_argument("--out", default="runs", help="base output directory")
    parser.add_argument("--jobs", type=int, default=1, help="trial-level parallelism")
    args = parser.parse_args(argv)
    try:
        raw = {}
        if args.config is not None:
            try:
                with open(args.config) as f:
                    raw = parse_config_text(f.read())
            except FileNotFoundError:
                raise CliError(f"config file not found: {args.config}") from None
        out_base = args.out if args.out != "runs" else raw.get("out", "runs")
        resolved = resolve_config(args.command, raw, args.seed)
        run_dir = make_run_dir(out_base, args.command, resolved)
        result = HANDLERS[args.command](resolved, run_dir, max(1, args.jobs))
        print(f"vdt-ok: {args.command} -> {run_dir}")
        if isinstance(result, dict):
            for key, value in sorted(result.items()):
                if isinstance(value, (int, float, str, bool)):
                    print(f"  {key} = {value}")
        return 0
    except (CliError, DataError, ValueError, FileNotFoundError) as exc:
        print(f"vdt-error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
