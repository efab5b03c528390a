"""Deterministic numeric kernels: matrices, seeded substreams, quantiles, scalers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STD_FLOOR = 1e-12

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def tensor2(data) -> np.ndarray:
    """Coerce to the universal value carrier: a 2-D, C-ordered float64 array.

    Raises ValueError on wrong rank or non-finite entries.
    """
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    return a


def _splitmix64(z: int) -> int:
    """SplitMix64 finalizer; the mixing step behind stream derivation."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Backed by Philox4x64 with the 128-bit key (seed, stream_id): the same
    pair replays the same sample sequence on every platform, and distinct
    stream ids index non-overlapping counter sequences. ``derive`` mixes a
    child id into the stream id with SplitMix64, so children of distinct
    ids get distinct keys.
    """

    seed: int
    stream_id: int = 0

    def derive(self, child_id: int) -> "RngStream":
        mixed = _splitmix64(_splitmix64(self.stream_id) ^ ((child_id + 1) * _GOLDEN & _MASK64))
        return RngStream(self.seed, mixed)

    def generator(self) -> np.random.Generator:
        key = ((self.seed & _MASK64) << 64) | (self.stream_id & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))


def gaussian_draw(stream: RngStream, n: int) -> np.ndarray:
    """n standard-normal variates; a fresh call on the same stream replays them."""
    if n < 1:
        raise ValueError("need n >= 1 draws")
    return stream.generator().standard_normal(n)


def quantile(samples, p, axis=None):
    """Linear-interpolation quantile on sorted order statistics.

    The interpolation index is h = (n-1)p; the result blends the two
    neighbouring order statistics. With ``axis`` given, samples may be an
    array and the quantile is taken along that axis (vectorised form of
    the same rule).
    """
    s = np.asarray(samples, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty sample set")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"quantile fraction must be in [0,1], got {p}")
    if axis is None:
        s = s.ravel()
        axis = 0
    s = np.sort(s, axis=axis)
    n = s.shape[axis]
    h = (n - 1) * p
    lo = int(np.floor(h))
    hi = int(np.ceil(h))
    s_lo = np.take(s, lo, axis=axis)
    s_hi = np.take(s, hi, axis=axis)
    return s_lo + (h - lo) * (s_hi - s_lo)


@dataclass(frozen=True)
class StandardScaler:
    """Per-feature z-score transform with population std, floored for constants."""

    means: np.ndarray
    stds: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.means) / self.stds

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * self.stds + self.means

    def select(self, cols) -> "StandardScaler":
        """Scaler restricted to a column subset (e.g. target columns only)."""
        cols = np.asarray(cols)
        return StandardScaler(self.means[cols], self.stds[cols])


def fit_scaler(X) -> StandardScaler:
    """Column means/stds of a nonempty matrix; constant columns map to zero."""
    X = tensor2(X)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a scaler on an empty matrix")
    means = X.mean(axis=0)
    stds = np.maximum(X.std(axis=0), STD_FLOOR)
    return StandardScaler(means, stds)
