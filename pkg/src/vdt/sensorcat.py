"""Structured sensor concatenation: block-mean downsampling, quantile
binning of per-sensor means, and a zig-zag interleave that turns a sensor
field into one quasi-periodic 1-D signal a recurrent model can learn.

Sensors are binned by mean level; passes over the bins alternate taking
the coolest remaining sensor from each bin (even passes) and the hottest
(odd passes), so concatenated segments ramp up and down instead of piling
up monotonically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import quantile

DEFAULT_BINS = 10
DEFAULT_INTERVAL_S = 30.0


@dataclass(frozen=True)
class SensorSeries:
    """One sensor's timestamped scalar signal plus its mean level."""

    sensor_id: str
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", v)
        if len(t) != len(v) or len(t) == 0:
            raise ValueError("timestamps and values must share a nonzero length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class ConcatSignal:
    """The concatenated 1-D signal with segment starts and the sensor order."""

    values: np.ndarray
    boundaries: list
    order: list
    segment_lengths: list

    def __len__(self):
        return len(self.values)


def downsample(series: SensorSeries, interval: float = DEFAULT_INTERVAL_S) -> SensorSeries:
    """Block means over consecutive time intervals; a partial tail block stays.

    Output timestamps sit on the interval grid anchored at the first sample.
    """
    spacing = np.min(np.diff(series.timestamps)) if len(series) > 1 else None
    if spacing is not None and interval <= spacing:
        raise ValueError(f"interval {interval} must exceed the native spacing {spacing}")
    t0 = series.timestamps[0]
    block = np.floor((series.timestamps - t0) / interval).astype(int)
    n_blocks = block[-1] + 1
    sums = np.bincount(block, weights=series.values, minlength=n_blocks)
    counts = np.bincount(block, minlength=n_blocks)
    keep = counts > 0
    means = sums[keep] / counts[keep]
    times = t0 + np.flatnonzero(keep) * interval
    return SensorSeries(series.sensor_id, times, means)


def bin_sensors(means, K: int = DEFAULT_BINS) -> list:
    """Quantile-edge binning of sensor indices by mean level.

    Edges sit at the j/K quantiles of the means; values equal to an edge go
    to the lower bin. Each bin comes back sorted ascending by mean, ties
    keeping input order (stable), so front/back pops are well defined.
    """
    means = np.asarray(means, dtype=np.float64)
    if means.size == 0:
        raise ValueError("no sensors to bin")
    if K < 1:
        raise ValueError("need at least one bin")
    edges = [quantile(means, j / K) for j in range(1, K)]
    bins = [[] for _ in range(K)]
    for idx in np.argsort(means, kind="stable"):
        m = means[idx]
        k = int(np.searchsorted(edges, m, side="left"))  # m == edge -> lower bin
        bins[k].append(int(idx))
    return bins


def zigzag_order(bins: list) -> list:
    """Alternating front/back sweep over the bins until all are drained.

    Pass c visits bins 0..K-1 in order and pops the front element of each
    nonempty bin when c is even, the back element when c is odd.
    """
    remaining = [list(b) for b in bins]
    order = []
    c = 0
    while any(remaining):
        for bucket in remaining:
            if bucket:
                order.append(bucket.pop(0) if c % 2 == 0 else bucket.pop())
        c += 1
    return order


def concat_order(means, K: int = DEFAULT_BINS) -> list:
    """bin_sensors + zigzag_order in one call."""
    return zigzag_order(bin_sensors(means, K))


def build_signal(series_list, order) -> ConcatSignal:
    """End-to-end concatenation of the series in the given order."""
    ids = [s.sensor_id for s in series_list]
    if sorted(order) != list(range(len(series_list))):
        raise ValueError("order must be a permutation of the series indices")
    values = np.concatenate([series_list[i].values for i in order])
    lengths = [len(series_list[i]) for i in order]
    boundaries = [0]
    for length in lengths[:-1]:
        boundaries.append(boundaries[-1] + length)
    ordered_ids = [ids[i] for i in order]
    return ConcatSignal(values, boundaries, ordered_ids, lengths)


def signal_features(signal: ConcatSignal) -> np.ndarray:
    """(n, 2) model input: value plus position-within-segment in [0, 1].

    The auxiliary channel tells a sequence model where segment seams fall,
    standing in for a second physical channel when only one quantity is fed.
    """
    pos = np.concatenate([
        np.linspace(0.0, 1.0, num=length, endpoint=False) for length in signal.segment_lengths
    ])
    return np.column_stack([signal.values, pos])
