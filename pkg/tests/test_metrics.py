import json

import numpy as np
import pytest

from vdt.metrics import attach_interval, compute, interval_diagnostics, r2_score


def test_perfect_prediction():
    y = np.array([1.0, 2.0, 3.0])
    rep = compute(y, y)
    assert rep.mae[0] == 0 and rep.mse[0] == 0 and rep.rmse[0] == 0 and rep.mape[0] == 0
    assert rep.r2[0] == 1.0


def test_mean_predictor_gives_r2_zero():
    y = np.array([1.0, 2.0, 3.0])
    rep = compute(y, np.full(3, y.mean()))
    assert rep.r2[0] == 0.0


def test_hand_arithmetic_reversed_prediction():
    y = np.array([1.0, 2.0, 3.0])
    yhat = np.array([3.0, 2.0, 1.0])
    rep = compute(y, yhat)
    assert rep.mse[0] == pytest.approx(8.0 / 3.0, abs=1e-15)
    assert rep.r2[0] == pytest.approx(-3.0, abs=1e-12)


def test_constant_truth_r2_flagged_nan():
    rep = compute(np.ones(5), np.linspace(0, 1, 5))
    assert np.isnan(rep.r2[0])
    assert not rep.r2_defined[0]


def test_rmse_is_sqrt_mse_and_mae_le_rmse():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        n = rng.integers(2, 12)
        y = rng.normal(size=n)
        yhat = rng.normal(size=n)
        rep = compute(y, yhat)
        assert rep.rmse[0] == pytest.approx(np.sqrt(rep.mse[0]), rel=1e-12)
        assert rep.mae[0] <= rep.rmse[0] + 1e-15


def test_r2_le_one_and_shift_invariant():
    rng = np.random.default_rng(1)
    for _ in range(200):
        y = rng.normal(size=20)
        yhat = rng.normal(size=20)
        r = compute(y, yhat).r2[0]
        assert r <= 1.0
        shifted = compute(y + 5.0, yhat + 5.0).r2[0]
        assert shifted == pytest.approx(r, rel=1e-9, abs=1e-12)


def test_permutation_invariance():
    rng = np.random.default_rng(2)
    y, yhat = rng.normal(size=30), rng.normal(size=30)
    perm = rng.permutation(30)
    a = compute(y, yhat)
    b = compute(y[perm], yhat[perm])
    for key in ("mae", "mse", "rmse", "r2", "mape"):
        assert getattr(a, key)[0] == pytest.approx(getattr(b, key)[0], rel=1e-12)


def test_mape_guard_near_zero_truth():
    rep = compute(np.array([0.0, 2.0]), np.array([1.0, 1.0]))
    assert np.isfinite(rep.mape[0])


def test_length_mismatch_and_empty():
    with pytest.raises(ValueError, match="mismatch"):
        compute(np.ones(3), np.ones(4))
    with pytest.raises(ValueError, match="empty"):
        compute(np.ones(0), np.ones(0))


def test_multi_column_reports():
    rng = np.random.default_rng(3)
    y = rng.normal(size=(40, 2))
    yhat = y + rng.normal(scale=0.1, size=(40, 2))
    rep = compute(y, yhat)
    assert rep.r2.shape == (2,)
    parsed = json.loads(rep.to_json())
    assert len(parsed["columns"]) == 2
    assert set(parsed["overall"]) >= {"mae", "mse", "rmse", "r2", "mape"}


def test_interval_degenerate_full_coverage():
    y = np.array([1.0, 2.0])
    cov, width = interval_diagnostics(y, y, y)
    assert cov == 1.0 and width == 0.0


def test_interval_covering_nothing():
    y = np.array([1.0, 2.0])
    cov, _ = interval_diagnostics(y, y + 1, y + 2)
    assert cov == 0.0


def test_interval_coverage_matches_binomial_oracle():
    # truth ~ N(0,1) inside fixed bands [-a, a]: coverage ~ 2*Phi(a)-1
    from math import erf, sqrt

    rng = np.random.default_rng(4)
    n = 20_000
    y = rng.standard_normal(n)
    a = 1.2
    p = erf(a / sqrt(2.0))
    cov, width = interval_diagnostics(y, np.full(n, -a), np.full(n, a))
    se = sqrt(p * (1 - p) / n)
    assert abs(cov - p) < 3 * se
    assert width == pytest.approx(2 * a, abs=1e-12)


def test_attach_interval_populates_report():
    class S:
        lower = np.zeros(4)
        upper = np.ones(4)

    y = np.array([0.5, 0.5, 2.0, 0.5])
    rep = attach_interval(compute(y, y), y, S)
    assert rep.ci_coverage == 0.75
    assert rep.mean_ci_width == 1.0
    assert "coverage" in rep.scalars()


def test_r2_score_shortcut():
    y = np.array([1.0, 2.0, 3.0])
    assert r2_score(y, y) == 1.0
