"""Figure rendering for experiment reports.

Every experiment command drops PNGs next to its CSV/JSON outputs so a run
directory is readable at a glance. Rendering is headless (Agg) and
write-temp/rename like every other artifact.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 140


def _save(fig, path):
    tmp = str(path) + ".tmp.png"
    fig.savefig(tmp, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    os.replace(tmp, path)


def save_fit_figure(path, truth, mean, lower=None, upper=None, title="prediction",
                    max_points=2000):
    """Truth vs predictive mean over sample index, with optional 95% band."""
    truth = np.asarray(truth).reshape(len(truth), -1)
    mean = np.asarray(mean).reshape(len(mean), -1)
    n_out = truth.shape[1]
    step = max(1, len(truth) // max_points)
    xs = np.arange(len(truth))[::step]
    fig, axes = plt.subplots(n_out, 1, figsize=(9, 2.6 * n_out), squeeze=False)
    for j in range(n_out):
        ax = axes[j, 0]
        ax.plot(xs, truth[::step, j], lw=0.9, color="k", label="truth")
        ax.plot(xs, mean[::step, j], lw=0.9, color="tab:blue", label="mean")
        if lower is not None and upper is not None:
            lo = np.asarray(lower).reshape(len(truth), -1)[::step, j]
            hi = np.asarray(upper).reshape(len(truth), -1)[::step, j]
            ax.fill_between(xs, lo, hi, color="tab:blue", alpha=0.25, lw=0, label="95% band")
        ax.set_ylabel(f"output {j}")
        if j == 0:
            ax.set_title(title)
            ax.legend(loc="best", fontsize=8)
    axes[-1, 0].set_xlabel("sample")
    _save(fig, path)


def save_learning_curves(path, aggregates: dict, title="acquisition learning curves"):
    """Mean R2 vs training size per strategy, one-sigma band."""
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for name, agg in aggregates.items():
        sizes = np.asarray(agg["sizes"])
        mean = np.asarray(agg["mean_r2"])
        std = np.asarray(agg["std_r2"])
        ax.plot(sizes, mean, marker="o", ms=3, label=name)
        ax.fill_between(sizes, mean - std, mean + std, alpha=0.2, lw=0)
    ax.set_xlabel("training samples")
    ax.set_ylabel("test R$^2$")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def save_cumulative_time(path, curves_by_strategy: dict):
    """Cumulative retraining seconds vs training size, per strategy."""
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for name, curves in curves_by_strategy.items():
        for i, c in enumerate(curves):
            ax.plot(c.sizes, c.cum_seconds, alpha=0.45,
                    color="tab:blue" if name == "aal" else "tab:orange",
                    label=name if i == 0 else None)
    ax.set_xlabel("training samples")
    ax.set_ylabel("cumulative seconds")
    ax.set_title("retraining cost as the pool grows")
    ax.legend()
    _save(fig, path)


def save_session_figure(path, logs, baseline_logs=None):
    """Per-session scores and wall times; optional cumulative baseline."""
    sessions = [l.session for l in logs]
    keys = sorted(k for k in logs[0].metrics if k.startswith("r2_"))
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for key in keys:
        ax1.plot(sessions, [l.metrics[key] for l in logs], marker="o", ms=3, label=key)
    ax1.set_ylabel("test R$^2$")
    ax1.legend(fontsize=8)
    ax1.set_title("session evolution")
    ax2.plot(sessions, [l.train_wall_s for l in logs], marker="o", ms=3,
             label="windowed train")
    ax2.plot(sessions, [l.infer_wall_s for l in logs], marker="s", ms=3,
             label="inference")
    if baseline_logs is not None:
        ax2.plot([l.session for l in baseline_logs],
                 [l.train_wall_s for l in baseline_logs],
                 marker="^", ms=3, label="cumulative baseline")
    ax2.set_xlabel("session")
    ax2.set_ylabel("seconds")
    ax2.legend(fontsize=8)
    _save(fig, path)


def save_battery_figure(path, records, static_results=None):
    """Per-block forecast MSE of the rolling twin vs static training budgets."""
    fig, ax = plt.subplots(figsize=(7.5, 4.2))
    ax.plot([r.block for r in records], [r.mse for r in records], marker="o", ms=4,
            color="gray", label="rolling update")
    if static_results:
        for budget, mse in sorted(static_results.items()):
            ax.axhline(mse, ls="--", lw=1, alpha=0.8, label=f"static {budget}")
    ax.set_xlabel("forecast block")
    ax.set_ylabel("MSE (V$^2$)")
    ax.set_yscale("log")
    ax.set_title("rolling vs static battery forecasting")
    ax.legend(fontsize=8)
    _save(fig, path)


def save_dropout_figure(path, rows):
    """Score and band width as the training sensor count shrinks."""
    fracs = [r["fraction"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.plot(fracs, [r["r2"] for r in rows], marker="o")
    ax1.set_xlabel("fraction of sensors kept")
    ax1.set_ylabel("test R$^2$")
    ax2.plot(fracs, [r["width"] for r in rows], marker="o", color="tab:red")
    ax2.set_xlabel("fraction of sensors kept")
    ax2.set_ylabel("mean 95% width")
    fig.suptitle("sensor dropout sweep")
    _save(fig, path)


def save_signal_figure(path, signal, title="concatenated sensor signal", max_points=4000):
    """The 1-D concatenation with gray segment boundaries."""
    step = max(1, len(signal.values) // max_points)
    xs = np.arange(len(signal.values))[::step]
    fig, ax = plt.subplots(figsize=(10, 3.2))
    ax.plot(xs, signal.values[::step], lw=0.6)
    for b in signal.boundaries[1:]:
        ax.axvline(b, color="gray", lw=0.4, alpha=0.6)
    ax.set_xlabel("concatenated step")
    ax.set_ylabel("value")
    ax.set_title(title)
    _save(fig, path)
