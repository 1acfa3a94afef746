import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (
    naive_departures,
    naive_extrema,
    naive_rmsls,
    naive_sdlp,
    naive_srr,
    random_log,
    triangle_deg,
)
from sharedsteer.errors import InsufficientDataError
from sharedsteer.metrics import (
    TrajectoryLog,
    compute_metrics,
    count_gap_reversals,
    departures,
    read_trajectory_csv,
    rmsls,
    sdlp,
    srr,
    stationary_indices,
    write_trajectory_csv,
)

FS = 100.0


def lat_log(values, fs=FS):
    return TrajectoryLog.from_arrays(fs, lat_pos=values)


def steer_log(angles_deg, fs=FS):
    return TrajectoryLog.from_arrays(fs, steer_angle=np.radians(angles_deg))


# ---- SDLP -------------------------------------------------------------------

def test_sdlp_constant_is_zero():
    assert sdlp(lat_log(np.full(50, 0.3))) == pytest.approx(0.0, abs=1e-15)


def test_sdlp_two_samples_population():
    assert sdlp(lat_log([0.2, 0.4])) == pytest.approx(0.1, rel=1e-12)


def test_sdlp_alternating_symmetric():
    a = 0.37
    assert sdlp(lat_log([-a, a] * 20)) == pytest.approx(a, rel=1e-12)


def test_sdlp_ignores_offset():
    x = np.random.default_rng(1).normal(size=300)
    assert sdlp(lat_log(x + 1.2)) == pytest.approx(sdlp(lat_log(x)), rel=1e-10)


def test_log_needs_two_samples():
    with pytest.raises(InsufficientDataError):
        lat_log([0.1])


# ---- RMSLS ------------------------------------------------------------------

def test_rmsls_examples():
    assert rmsls(TrajectoryLog.from_arrays(FS, lat_speed=[0.0, 0.0])) == 0.0
    assert rmsls(TrajectoryLog.from_arrays(FS, lat_speed=[0.6, 0.8])) == pytest.approx(0.70711, abs=1e-5)
    assert rmsls(TrajectoryLog.from_arrays(FS, lat_speed=[-0.25] * 9)) == pytest.approx(0.25, rel=1e-12)


# ---- SRR --------------------------------------------------------------------

def test_srr_constant_angle_is_zero():
    assert srr(steer_log(np.full(1000, 3.0))) == 0.0


def test_srr_three_reversals_in_ten_seconds():
    # minimum at 0 s, maximum at 3.33 s, minimum at 6.67 s, maximum at 10 s:
    # three 2-degree reversals by construction
    angles = triangle_deg(1000, FS, period=20 / 3)
    log = steer_log(angles)
    assert log.duration == 10.0
    assert srr(log) == 0.3


def test_srr_sub_threshold_oscillation_is_ignored():
    t = np.arange(1000) / FS
    assert srr(steer_log(0.5 * np.sin(2 * np.pi * 0.2 * t)), gap_threshold=1.0) == 0.0


def test_srr_high_frequency_content_is_filtered():
    t = np.arange(2000) / FS
    # 5 Hz, 4 degree wiggle is far above the 0.6 Hz cutoff
    assert srr(steer_log(4.0 * np.sin(2 * np.pi * 5.0 * t))) == 0.0


def test_srr_concatenation_keeps_rate():
    # exactly three periods, so the doubled trace is a seamless continuation
    t = np.arange(1500) / FS
    angles = 2.0 * (1 - np.cos(2 * np.pi * 0.2 * t))
    log = steer_log(angles)
    doubled = log.concatenated(log)
    assert srr(log) > 0
    assert srr(doubled) == pytest.approx(srr(log), rel=1e-12)


def test_srr_rate_method():
    angles = triangle_deg(1000, FS, period=20 / 3)  # 2 degrees per 3.33 s = 0.6 deg/s
    log = steer_log(angles)
    assert srr(log, method="rate", rate_threshold=0.5) == 0.3
    assert srr(log, method="rate", rate_threshold=1.0) == 0.0
    with pytest.raises(ValueError):
        srr(log, method="bogus")


def test_srr_rejects_bad_threshold():
    with pytest.raises(ValueError):
        srr(steer_log(np.zeros(10)), gap_threshold=0.0)


def test_gap_counter_hand_count():
    # upward: 0 -> 1.5 and 1.3 -> 3.0; downward: 3.0 -> 0.0.
    # The 0.2-degree dip is below the gap and is not a downward reversal.
    assert count_gap_reversals([0.0, 1.5, 1.3, 3.0, 0.0], gap=1.0) == 3
    assert count_gap_reversals([0.0, 0.9, 0.2, 0.95], gap=1.0) == 0


def test_stationary_indices_plateau():
    x = np.array([0.0, 1.0, 2.0, 2.0, 2.0, 1.0, 0.0, 0.0, 1.0])
    assert stationary_indices(x).tolist() == [0, 2, 6, 8]


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=60))
def test_stationary_values_match_naive(xs):
    x = np.array(xs)
    assert x[stationary_indices(x)].tolist() == naive_extrema(xs)


# ---- departures --------------------------------------------------------------

def test_departures_examples():
    t = np.linspace(0, 1, 200)
    assert departures(lat_log(np.sin(2 * np.pi * t)), 3.7) == 0
    single = np.concatenate([np.linspace(0, 2.0, 50), np.linspace(2.0, 0, 50)])
    assert departures(lat_log(single), 3.7) == 1
    double = np.concatenate([single, -single])
    assert departures(lat_log(double), 3.7) == 2
    assert naive_departures(double, 1.85) == 2


def test_departure_starting_outside_counts():
    assert departures(lat_log([2.0, 2.0, 0.0]), 3.7) == 1


# ---- oracle comparison on random logs ---------------------------------------

def test_metrics_match_naive_oracles_on_random_logs():
    rng = np.random.default_rng(20240601)
    for _ in range(100):
        log = random_log(rng)
        lat = log.lat_pos.tolist()
        assert sdlp(log) == pytest.approx(naive_sdlp(lat), rel=1e-12)
        assert rmsls(log) == pytest.approx(naive_rmsls(log.lat_speed.tolist()), rel=1e-12)
        assert srr(log) == pytest.approx(naive_srr(log.steer_angle.tolist(), log.sample_rate), rel=1e-12)
        assert departures(log, 0.5) == naive_departures(lat, 0.25)


def test_time_reversal_and_mirror_invariance():
    rng = np.random.default_rng(11)
    for _ in range(20):
        log = random_log(rng)
        rev = log.reversed()
        assert sdlp(rev) == pytest.approx(sdlp(log), rel=1e-12)
        assert rmsls(rev) == pytest.approx(rmsls(log), rel=1e-12)
        mirror = TrajectoryLog.from_arrays(log.sample_rate, lat_pos=-log.lat_pos, lat_speed=-log.lat_speed)
        assert sdlp(mirror) == pytest.approx(sdlp(log), rel=1e-12)
        assert rmsls(mirror) == pytest.approx(rmsls(log), rel=1e-12)


# ---- log validation and CSV round trip --------------------------------------

def test_log_validation():
    with pytest.raises(ValueError):
        TrajectoryLog.from_arrays(FS, lat_pos=[0, 1, 2]).__class__(
            sample_rate=FS, t=np.array([0.0, 0.02, 0.01]), **{
                c: np.zeros(3) for c in ("lat_pos", "heading", "steer_angle", "driver_tq",
                                         "assist_tq", "lat_speed", "engaged")})
    with pytest.raises(TypeError):
        TrajectoryLog.from_arrays(FS, nope=[1, 2])


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    log = random_log(rng)
    log = TrajectoryLog.from_arrays(log.sample_rate, lat_pos=log.lat_pos, steer_angle=log.steer_angle,
                                    lat_speed=log.lat_speed, engaged=rng.integers(0, 2, len(log)))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(log, path)
    header = path.read_text().splitlines()[0]
    assert header == "t,lat_pos,heading,steer_angle,driver_tq,assist_tq,lat_speed,engaged"
    back = read_trajectory_csv(path)
    assert back.sample_rate == pytest.approx(log.sample_rate, rel=1e-9)
    np.testing.assert_array_equal(back.lat_pos, log.lat_pos)
    np.testing.assert_array_equal(back.engaged, log.engaged)
    assert compute_metrics(back) == compute_metrics(log)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=100))
def test_metric_set_nonnegative(xs):
    log = TrajectoryLog.from_arrays(FS, lat_pos=xs, lat_speed=xs, steer_angle=np.radians(xs))
    m = compute_metrics(log)
    assert m.sdlp >= 0 and m.rmsls >= 0 and m.srr >= 0 and m.departure_count >= 0
    assert all(math.isfinite(v) for v in (m.sdlp, m.srr, m.rmsls, m.duration))
