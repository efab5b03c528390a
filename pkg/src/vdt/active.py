"""Pool-based acquisition for the tabular twin: uncertainty-ranked picks from
a random candidate subset, against a random-sampling baseline.

Both strategies run the identical loop -- subsample candidates, score,
take the top picks, retrain from scratch, evaluate -- differing only in
the scoring step (posterior spread vs uniform noise). Retraining from
scratch is deliberate: it reproduces the growing per-iteration cost that
the session-based updater exists to avoid.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .metrics import r2_score
from .numkit import RngStream
from .train import TrainConfig, fit
from .varlayer import predict_with_ci, uncertainty_score

SCORE_SAMPLES = 50  # stochastic passes behind one acquisition score

STRATEGIES = ("aal", "random")


@dataclass(frozen=True)
class AalConfig:
    """Acquisition loop constants."""

    initial_n: int = 10
    per_iter: int = 20
    candidate_pool: int = 500
    target_r2: float = 0.98
    trials: int = 50
    max_pool: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.per_iter <= self.candidate_pool):
            raise ValueError("need 0 < per_iter <= candidate_pool")
        if not (0.0 < self.target_r2 <= 1.0):
            raise ValueError("target_r2 must be in (0, 1]")


@dataclass
class LearningCurve:
    """One trial's trajectory: training size, test score, cumulative seconds."""

    sizes: list = field(default_factory=list)
    r2: list = field(default_factory=list)
    cum_seconds: list = field(default_factory=list)
    index_hashes: list = field(default_factory=list)
    reached: bool = False

    def record(self, size, score, elapsed, labeled):
        self.sizes.append(int(size))
        self.r2.append(float(score))
        self.cum_seconds.append(float(elapsed))
        key = np.asarray(sorted(labeled), dtype=np.int64).tobytes()
        self.index_hashes.append(zlib.crc32(key) & 0xFFFFFFFF)

    @property
    def final_size(self) -> int:
        return self.sizes[-1]


def acquire(model, X_pool: np.ndarray, unlabeled, cfg: AalConfig, stream: RngStream,
            strategy: str = "aal") -> list:
    """Pick cfg.per_iter indices from the unlabeled pool.

    A candidate subset of cfg.candidate_pool indices is drawn uniformly
    without replacement (everything, if fewer remain); candidates are
    scored -- posterior predictive spread for "aal", uniform noise for
    "random" -- and the top per_iter win, ties to the lower index.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    unlabeled = list(unlabeled)
    if len(unlabeled) < cfg.per_iter:
        raise ValueError(f"unlabeled pool has {len(unlabeled)} rows, "
                         f"need at least {cfg.per_iter}")
    gen = stream.derive(0).generator()
    k = min(cfg.candidate_pool, len(unlabeled))
    positions = gen.choice(len(unlabeled), size=k, replace=False)
    candidates = [unlabeled[p] for p in positions]
    if strategy == "aal":
        summary = predict_with_ci(model, X_pool[candidates], S=SCORE_SAMPLES,
                                  stream=stream.derive(1))
        scores = uncertainty_score(summary)
    else:
        scores = gen.uniform(size=k)
    ranked = sorted(range(k), key=lambda i: (-scores[i], candidates[i]))
    return [candidates[i] for i in ranked[: cfg.per_iter]]


def run_trial(pool, test_set, cfg: AalConfig, strategy: str, model_factory,
              train_config: TrainConfig, trial_seed: int | None = None) -> LearningCurve:
    """Acquire/label/retrain/evaluate until the target score or an empty pool.

    pool and test_set are (X, y) pairs in model units; model_factory maps an
    RngStream to a fresh model (retraining restarts from scratch each
    iteration). Fully deterministic given the seed, per strategy.
    """
    X_pool, y_pool = pool
    X_test, y_test = test_set
    seed = cfg.seed if trial_seed is None else trial_seed
    stream = RngStream(seed, 11)
    n = len(X_pool)
    if cfg.initial_n > n:
        raise ValueError("initial_n exceeds the pool")
    start_order = stream.derive(0).generator().permutation(n)
    labeled = list(start_order[: cfg.initial_n])
    unlabeled = [int(i) for i in start_order[cfg.initial_n :]]
    curve = LearningCurve()
    t0 = time.perf_counter()
    it = 0
    while True:
        model = model_factory(stream.derive(1000 + it))
        tc = TrainConfig(
            epochs=train_config.epochs, batch_size=train_config.batch_size,
            lr=train_config.lr, lr_schedule=train_config.lr_schedule,
            seed=seed * 131071 + it, beta=train_config.beta,
            clip_norm=train_config.clip_norm, weight_decay=train_config.weight_decay,
        )
        fit(model, (X_pool[labeled], y_pool[labeled]), tc)
        score = r2_score(y_test, model.predict(X_test))
        curve.record(len(labeled), score, time.perf_counter() - t0, labeled)
        if score >= cfg.target_r2:
            curve.reached = True
            return curve
        if len(unlabeled) < cfg.per_iter:
            return curve
        picked = acquire(model, X_pool, unlabeled, cfg, stream.derive(2000 + it), strategy)
        labeled.extend(picked)
        taken = set(picked)
        unlabeled = [i for i in unlabeled if i not in taken]
        it += 1


def aggregate_trials(curves: list) -> dict:
    """Per-size mean/std (population) of R2; short curves carry their final score."""
    if not curves:
        raise ValueError("no curves to aggregate")
    sizes = sorted({s for c in curves for s in c.sizes})
    table = np.empty((len(curves), len(sizes)))
    for i, c in enumerate(curves):
        lookup = dict(zip(c.sizes, c.r2))
        last = c.r2[0]
        for j, s in enumerate(sizes):
            if s in lookup:
                last = lookup[s]
            table[i, j] = last
    return {
        "sizes": sizes,
        "mean_r2": table.mean(axis=0).tolist(),
        "std_r2": table.std(axis=0).tolist(),
    }


def paired_trial(pool, test_set, cfg: AalConfig, model_factory, train_config,
                 trial_seed: int) -> dict:
    """Both strategies on one seed; the paired unit of the efficiency studies."""
    out = {}
    for strategy in STRATEGIES:
        out[strategy] = run_trial(pool, test_set, cfg, strategy, model_factory,
                                  train_config, trial_seed=trial_seed)
    return out
