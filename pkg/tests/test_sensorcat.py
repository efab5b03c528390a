import numpy as np
import pytest

from vdt.sensorcat import (
    ConcatSignal,
    SensorSeries,
    bin_sensors,
    build_signal,
    concat_order,
    downsample,
    signal_features,
    zigzag_order,
)


def _series(sensor_id, values, dt=1.0):
    values = np.asarray(values, dtype=float)
    return SensorSeries(sensor_id, np.arange(len(values)) * dt, values)


def test_downsample_constant_series():
    s = _series("a", np.full(100, 7.0), dt=0.5)
    out = downsample(s, interval=10.0)
    assert np.all(out.values == 7.0)
    assert len(out) < len(s)


def test_downsample_counting_oracle_2hz():
    # 2 Hz for 60 s = 120 points; 30-s blocks hold 60 points; 2 blocks out
    s = _series("a", np.arange(120.0), dt=0.5)
    out = downsample(s, interval=30.0)
    assert len(out) == 2
    assert out.values[0] == np.mean(np.arange(60.0))
    assert out.values[1] == np.mean(np.arange(60.0, 120.0))


def test_downsample_partial_tail_block():
    s = _series("a", np.arange(10.0), dt=1.0)  # 10 s of 1 Hz
    out = downsample(s, interval=4.0)
    assert len(out) == 3
    assert out.values[-1] == np.mean([8.0, 9.0])  # two-sample tail


def test_downsample_whole_duration_single_point():
    s = _series("a", np.arange(12.0), dt=1.0)
    out = downsample(s, interval=100.0)
    assert len(out) == 1
    assert out.values[0] == np.mean(np.arange(12.0))


def test_downsample_interval_must_exceed_spacing():
    s = _series("a", np.arange(5.0), dt=2.0)
    with pytest.raises(ValueError, match="native spacing"):
        downsample(s, interval=1.0)


def test_series_validation():
    with pytest.raises(ValueError, match="increasing"):
        SensorSeries("a", np.array([0.0, 0.0, 1.0]), np.zeros(3))
    with pytest.raises(ValueError, match="length"):
        SensorSeries("a", np.array([0.0]), np.zeros(2))


def test_bin_sensors_hand_trace_two_bins():
    bins = bin_sensors([10.0, 20.0, 30.0, 40.0], K=2)
    assert bins == [[0, 1], [2, 3]]  # median edge 25, lower-or-equal goes low


def test_bin_sensors_fewer_sensors_than_bins():
    bins = bin_sensors([5.0, 1.0], K=10)
    flat = sorted(i for b in bins for i in b)
    assert flat == [0, 1]
    assert sum(1 for b in bins if b) <= 2


def test_bin_sensors_all_equal_means_single_bin():
    bins = bin_sensors([3.0, 3.0, 3.0, 3.0], K=4)
    assert bins[0] == [0, 1, 2, 3]  # edge-straddling values fall low, input order kept
    assert all(not b for b in bins[1:])


def test_bin_sensors_sorted_ascending_within_bin():
    means = [4.0, 1.0, 3.0, 2.0]
    bins = bin_sensors(means, K=1)
    assert bins[0] == [1, 3, 2, 0]


def test_zigzag_single_bin_front_back_front():
    # means [1,2,3] in one bin: front (1), back (3), front (2)
    bins = bin_sensors([1.0, 2.0, 3.0], K=1)
    assert zigzag_order(bins) == [0, 2, 1]


def test_zigzag_two_bins_hand_trace():
    # [10,20,30,40], K=2: pass 0 takes fronts (10, 30), pass 1 backs (20, 40)
    order = concat_order([10.0, 20.0, 30.0, 40.0], K=2)
    assert order == [0, 2, 1, 3]


def test_zigzag_single_sensor():
    assert concat_order([42.0], K=10) == [0]


def test_zigzag_is_permutation_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        n = int(rng.integers(1, 40))
        K = int(rng.integers(1, 13))
        means = rng.normal(size=n)
        order = concat_order(means, K=K)
        assert sorted(order) == list(range(n))


def test_zigzag_alternates_ends_within_each_bin():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(2, 30))
        K = int(rng.integers(1, 6))
        means = rng.normal(size=n)
        bins = bin_sensors(means, K)
        order = zigzag_order(bins)
        for bucket in bins:
            if len(bucket) < 2:
                continue
            taken = [i for i in order if i in set(bucket)]
            # reconstruct the expected front/back alternation of the sorted bin
            dq, expected, front = list(bucket), [], True
            while dq:
                expected.append(dq.pop(0) if front else dq.pop())
                front = not front
            assert taken == expected


def test_zigzag_deterministic():
    means = np.random.default_rng(2).normal(size=25)
    assert concat_order(means, 10) == concat_order(means.copy(), 10)


def test_build_signal_lengths_and_boundaries():
    a = _series("s0", np.arange(3.0))
    b = _series("s1", np.arange(5.0) + 10)
    sig = build_signal([a, b], [0, 1])
    assert len(sig) == 8
    assert sig.boundaries == [0, 3]
    assert sig.order == ["s0", "s1"]


def test_build_signal_identity_order_is_plain_concat():
    a = _series("s0", [1.0, 2.0])
    b = _series("s1", [3.0, 4.0])
    sig = build_signal([a, b], [0, 1])
    assert np.array_equal(sig.values, [1, 2, 3, 4])


def test_build_signal_conserves_values():
    rng = np.random.default_rng(3)
    series = [_series(f"s{i}", rng.normal(size=rng.integers(2, 20))) for i in range(8)]
    order = concat_order([s.mean for s in series], K=3)
    sig = build_signal(series, order)
    total = sum(s.values.sum() for s in series)
    sq = sum((s.values**2).sum() for s in series)
    assert sig.values.sum() == pytest.approx(total, rel=1e-12)
    assert (sig.values**2).sum() == pytest.approx(sq, rel=1e-12)


def test_build_signal_rejects_bad_order():
    a = _series("s0", [1.0, 2.0])
    b = _series("s1", [3.0])
    with pytest.raises(ValueError, match="permutation"):
        build_signal([a, b], [0, 0])
    with pytest.raises(ValueError, match="permutation"):
        build_signal([a, b], [0])


def test_signal_features_two_channels():
    a = _series("s0", [1.0, 2.0, 3.0])
    b = _series("s1", [4.0, 5.0])
    sig = build_signal([a, b], [1, 0])
    feats = signal_features(sig)
    assert feats.shape == (5, 2)
    assert np.array_equal(feats[:, 0], sig.values)
    assert feats[0, 1] == 0.0 and feats[2, 1] == 0.0  # each segment restarts at 0
