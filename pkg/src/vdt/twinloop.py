"""Streaming twin updates: fixed-window warm-started sessions for series
data, and the block-wise rolling fine-tune for the battery twin.

A session trains only on its own window (warm-started from the previous
session's checkpoint file, so continuity survives a process restart) and
is evaluated on the window that follows. That keeps per-session cost flat
as history grows; the cumulative mode retrains from scratch on everything
seen so far and exists as the contrast baseline whose cost grows with
asset age.
"""

from __future__ import annotations

import os
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .metrics import attach_interval, compute
from .numkit import RngStream, StandardScaler, fit_scaler, tensor2
from .train import TrainConfig, fit, load_checkpoint, apply_checkpoint, save_checkpoint
from .varlayer import predict_with_ci

CI_SAMPLES = 50  # stochastic passes behind session evaluation bands


def make_sequences(series, L: int, target_cols) -> tuple:
    """Window/next-step pairs: X[k] = rows k..k+L-1, y[k] = targets of row k+L.

    Returns X with shape (N-L, L, F) and y with shape (N-L, len(target_cols)).
    """
    series = tensor2(series)
    n = series.shape[0]
    if L < 1:
        raise ValueError("window length must be >= 1")
    if n <= L:
        raise ValueError(f"series has {n} rows; need more than L={L}")
    target_cols = np.asarray(target_cols, dtype=int)
    count = n - L
    X = np.empty((count, L, series.shape[1]))
    for k in range(count):
        X[k] = series[k : k + L]
    y = series[L:, :][:, target_cols]
    return X, y


@dataclass(frozen=True)
class SessionPlan:
    """How the pair stream tiles into train/test windows.

    Pair k predicts series row k+L; session t trains on pairs whose target
    rows fall in [t*W, (t+1)*W) of the pair stream and is tested on the
    following test_window pairs. Each test window never overlaps its own
    train window (it *is* the next session's train data, as in a rolling
    deployment).
    """

    seq_len: int
    train_window: int
    test_window: int
    sessions: int

    def __post_init__(self):
        if min(self.seq_len, self.train_window, self.test_window, self.sessions) < 1:
            raise ValueError("plan sizes must all be >= 1")

    def pairs_needed(self) -> int:
        return self.sessions * self.train_window + self.test_window

    def train_slice(self, t: int) -> slice:
        return slice(t * self.train_window, (t + 1) * self.train_window)

    def cumulative_slice(self, t: int) -> slice:
        return slice(0, (t + 1) * self.train_window)

    def test_slice(self, t: int) -> slice:
        start = (t + 1) * self.train_window
        return slice(start, start + self.test_window)


@dataclass
class SessionLog:
    """One session's outcome: scores, wall times, checkpoint reference."""

    session: int
    metrics: dict
    train_wall_s: float
    infer_wall_s: float
    checkpoint: str
    n_train_pairs: int
    train_rows_crc: int

    def csv_row(self) -> dict:
        row = {"session": self.session, "n_train_pairs": self.n_train_pairs,
               "train_wall_s": self.train_wall_s, "infer_wall_s": self.infer_wall_s,
               "checkpoint": self.checkpoint, "train_rows_crc": self.train_rows_crc}
        row.update(self.metrics)
        return row


def _flatten_metrics(report, outputs: int) -> dict:
    out = {}
    for j in range(outputs):
        col = report.per_column(j)
        for key in ("r2", "mae", "rmse"):
            out[f"{key}_y{j}"] = col[key]
    if report.ci_coverage is not None:
        out["coverage"] = report.ci_coverage
        out["width"] = report.mean_ci_width
    return out


def _rows_crc(rows) -> int:
    return zlib.crc32(np.asarray(sorted(rows), dtype=np.int64).tobytes()) & 0xFFFFFFFF


def run_sessions(series, target_cols, plan: SessionPlan, config: TrainConfig,
                 model_factory, out_dir, mode: str = "rolling", scaler: StandardScaler | None = None,
                 ci_samples: int = CI_SAMPLES) -> list:
    """Warm-started window-by-window training with held-out evaluation.

    mode "rolling" trains session t on its own window starting from the
    session t-1 checkpoint; "cumulative" retrains from a fresh
    initialisation on every pair seen so far (the growing-cost baseline).
    Feature/target scaling is fit on session 0's training rows and frozen;
    metrics are reported in the original data units.
    """
    if mode not in ("rolling", "cumulative"):
        raise ValueError(f"unknown mode {mode!r}")
    series = tensor2(series)
    target_cols = list(target_cols)
    X_all, y_all = make_sequences(series, plan.seq_len, target_cols)
    if plan.pairs_needed() > len(X_all):
        raise ValueError(
            f"plan needs {plan.pairs_needed()} pairs, series only yields {len(X_all)}"
        )
    os.makedirs(out_dir, exist_ok=True)

    first_rows = plan.train_slice(0)
    if scaler is None:
        scaler = fit_scaler(series[: plan.seq_len + first_rows.stop])
    series_scaled = scaler.transform(series)
    Xs, _ = make_sequences(series_scaled, plan.seq_len, target_cols)
    target_scaler = scaler.select(target_cols)
    ys = target_scaler.transform(y_all)

    root = RngStream(config.seed, 23)
    logs = []
    model = None
    for t in range(plan.sessions):
        train_rows = plan.cumulative_slice(t) if mode == "cumulative" else plan.train_slice(t)
        ckpt_path = os.path.join(out_dir, f"session_{t:03d}.vdtc")
        if mode == "cumulative" or t == 0:
            model = model_factory(root.derive(100 + (t if mode == "cumulative" else 0)))
        else:
            prev = os.path.join(out_dir, f"session_{t - 1:03d}.vdtc")
            if not os.path.exists(prev):
                raise FileNotFoundError(
                    f"missing checkpoint {prev}; rerun from session 0 or restore it to resume"
                )
            apply_checkpoint(model, load_checkpoint(prev))
        session_cfg = TrainConfig(
            epochs=config.epochs, batch_size=config.batch_size, lr=config.lr,
            lr_schedule=config.lr_schedule, seed=config.seed * 8191 + t,
            beta=config.beta, clip_norm=config.clip_norm, weight_decay=config.weight_decay,
        )
        result = fit(model, (Xs[train_rows], ys[train_rows]), session_cfg)
        save_checkpoint(model, ckpt_path)

        test_rows = plan.test_slice(t)
        t_inf = time.perf_counter()
        summary = predict_with_ci(model, Xs[test_rows], S=ci_samples,
                                  stream=root.derive(500 + t))
        infer_wall = time.perf_counter() - t_inf
        pred_raw = target_scaler.inverse(summary.mean)
        truth_raw = y_all[test_rows]
        report = compute(truth_raw, pred_raw)
        lower_raw = target_scaler.inverse(summary.lower)
        upper_raw = target_scaler.inverse(summary.upper)
        coverage = float(np.mean((lower_raw <= truth_raw) & (truth_raw <= upper_raw)))
        report.ci_coverage = coverage
        report.mean_ci_width = float(np.mean(upper_raw - lower_raw))
        logs.append(SessionLog(
            session=t,
            metrics=_flatten_metrics(report, len(target_cols)),
            train_wall_s=result.wall_s,
            infer_wall_s=infer_wall,
            checkpoint=ckpt_path,
            n_train_pairs=train_rows.stop - train_rows.start,
            train_rows_crc=_rows_crc(range(train_rows.start, train_rows.stop)),
        ))
    return logs


# -- rolling battery updates ---------------------------------------------------------


@dataclass
class BlockRecord:
    """Held-out predictions for one block, made before training on it."""

    block: int
    profile_indices: list
    trained_blocks: list
    trained_rows_crc: int
    mse: float
    mape: float
    rmse: float
    coverage: float
    width: float
    per_discharge_mse: list = field(default_factory=list)
    predictions: list = field(default_factory=list)  # (mean, lower, upper) per profile

    def csv_row(self) -> dict:
        return {"block": self.block, "mse": self.mse, "mape": self.mape,
                "rmse": self.rmse, "coverage": self.coverage, "width": self.width,
                "trained_blocks": "|".join(map(str, self.trained_blocks)),
                "trained_rows_crc": self.trained_rows_crc}


def _blocks(n: int, block: int) -> list:
    return [list(range(lo, min(lo + block, n))) for lo in range(0, n, block)]


def evaluate_profiles(model, profiles, indices, stream, ci_samples: int = CI_SAMPLES):
    """Coverage, width, and errors of credible-interval forecasts per profile."""
    truths, means, lowers, uppers, per_mse, preds = [], [], [], [], [], []
    for j, idx in enumerate(indices):
        p = profiles[idx]
        summary = predict_with_ci(model, p.current.reshape(1, -1), S=ci_samples,
                                  stream=stream.derive(j))
        mean = summary.mean[0]
        truths.append(p.voltage)
        means.append(mean)
        lowers.append(summary.lower[0])
        uppers.append(summary.upper[0])
        per_mse.append(float(np.mean((mean - p.voltage) ** 2)))
        preds.append((mean, summary.lower[0], summary.upper[0]))
    truth = np.concatenate(truths)
    mean = np.concatenate(means)
    lo = np.concatenate(lowers)
    hi = np.concatenate(uppers)
    report = compute(truth, mean)
    coverage = float(np.mean((lo <= truth) & (truth <= hi)))
    width = float(np.mean(hi - lo))
    return report, coverage, width, per_mse, preds


def rolling_update(profiles, model, config: TrainConfig, block: int = 10,
                   ci_samples: int = CI_SAMPLES, keep_predictions: bool = False,
                   initial_config: TrainConfig | None = None) -> list:
    """Predict each block with a model that has never seen it, then absorb it.

    The first block only trains (under ``initial_config`` when given, since
    a cold start usually wants a longer budget than a fine-tune); every
    later block is forecast (with 95% bands) before its profiles join the
    training stream. Returns one BlockRecord per forecast block,
    provenance included.
    """
    n = len(profiles)
    if block < 1:
        raise ValueError("block size must be >= 1")
    if n < block + 1:
        raise ValueError(f"need at least block+1={block + 1} profiles, got {n}")
    groups = _blocks(n, block)
    root = RngStream(config.seed, 31)
    trained_rows = list(groups[0])
    trained_blocks = [0]
    fit(model, [profiles[i] for i in groups[0]],
        _indexed_config(initial_config or config, 0))
    records = []
    for k in range(1, len(groups)):
        report, coverage, width, per_mse, preds = evaluate_profiles(
            model, profiles, groups[k], root.derive(1000 + k), ci_samples)
        records.append(BlockRecord(
            block=k, profile_indices=list(groups[k]), trained_blocks=list(trained_blocks),
            trained_rows_crc=_rows_crc(trained_rows),
            mse=float(report.mse[0]), mape=float(report.mape[0]), rmse=float(report.rmse[0]),
            coverage=coverage, width=width, per_discharge_mse=per_mse,
            predictions=preds if keep_predictions else [],
        ))
        fit(model, [profiles[i] for i in groups[k]], _indexed_config(config, k))
        trained_rows.extend(groups[k])
        trained_blocks.append(k)
    return records


def _indexed_config(config: TrainConfig, k: int) -> TrainConfig:
    return TrainConfig(
        epochs=config.epochs, batch_size=config.batch_size, lr=config.lr,
        lr_schedule=config.lr_schedule, seed=config.seed * 524287 + k,
        beta=config.beta, clip_norm=config.clip_norm, weight_decay=config.weight_decay,
        lam=config.lam,
    )
