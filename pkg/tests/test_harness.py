import itertools
import math
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from sharedsteer import harness
from sharedsteer.driver import DistractionProtocol, DriverConfig
from sharedsteer.errors import ConfigurationError, PlantDivergenceError
from sharedsteer.harness import (
    ConditionResult,
    ExperimentPlan,
    RunRecord,
    Scenario,
    balanced_latin_square,
    initial_state,
    iter_runs,
    participant_orders,
    run_condition,
    run_sweep,
    worker_count,
    write_aggregate_csv,
    write_metrics_csv,
)
from sharedsteer.lkas import LkasConfig
from sharedsteer.metrics import MetricSet, compute_metrics

SHORT = 20.0


def plan(**kw):
    kw.setdefault("session_duration", SHORT)
    kw.setdefault("seeds_per_condition", 2)
    return ExperimentPlan(**kw)


# ---- single runs ------------------------------------------------------------

def test_no_excitation_stays_centred():
    quiet = Scenario(driver=DriverConfig(noise_std=0.0), initial_heading_deg=0.0)
    p = plan(scenario=quiet)
    traj = run_condition(LkasConfig(0.0, 0.0), p, seed=7)
    assert np.all(traj.lat_pos == 0.0)
    m = compute_metrics(traj, lane_width=3.7)
    assert m.sdlp == 0.0 and m.rmsls == 0.0 and m.departure_count == 0


def test_run_is_deterministic():
    p = plan()
    a = run_condition(p.lkas_config(2.0, 0.4), p, seed=42)
    b = run_condition(p.lkas_config(2.0, 0.4), p, seed=42)
    for col in ("lat_pos", "heading", "steer_angle", "driver_tq", "assist_tq", "engaged"):
        np.testing.assert_array_equal(getattr(a, col), getattr(b, col))


def test_log_shape_and_timebase():
    p = plan(session_duration=3.0)
    traj = run_condition(p.lkas_config(1.0, 0.0), p, seed=0)
    assert len(traj.t) == 300
    assert traj.t[1] == pytest.approx(0.01)
    assert compute_metrics(traj, 3.7).duration == pytest.approx(3.0)


def test_seed_controls_perturbation_sign():
    signs = {math.copysign(1, initial_state(Scenario(), s).heading) for s in range(20)}
    assert signs == {1.0, -1.0}
    assert abs(initial_state(Scenario(), 3).heading) == pytest.approx(math.radians(0.5))


def test_stronger_torque_gives_lower_sdlp():
    p = ExperimentPlan(seeds_per_condition=30)
    sdlp = {}
    for tor in (1.0, 3.0):
        cfg = p.lkas_config(tor, 0.0)
        sdlp[tor] = np.mean([compute_metrics(run_condition(cfg, p, s), 3.7).sdlp for s in p.seeds])
    assert sdlp[3.0] < sdlp[1.0]


def test_divergence_is_reported(monkeypatch):
    real = harness.step_plant

    def broken(state, *a, **kw):
        nxt = real(state, *a, **kw)
        return replace(nxt, heading=math.nan) if nxt.time > 0.5 else nxt

    monkeypatch.setattr(harness, "step_plant", broken)
    p = plan()
    with pytest.raises(PlantDivergenceError, match="seed=5"):
        run_condition(p.lkas_config(2.0, 0.4), p, seed=5)


def test_too_short_session():
    with pytest.raises(ConfigurationError):
        run_condition(LkasConfig(1, 0), plan(session_duration=0.01), seed=0)


# ---- sweeps -----------------------------------------------------------------

def test_sweep_counts():
    p = plan(session_duration=2.0, seeds_per_condition=3)
    results = run_sweep(p, workers=1)
    assert len(results) == 9
    assert sum(len(r.runs) for r in results) == 27
    assert [(r.config.k_tor, r.config.k_dev) for r in results] == list(
        itertools.product((1.0, 2.0, 3.0), (0.0, 0.4, 0.8)))


def test_single_cell_aggregate_equals_run():
    p = plan(tor_levels=(2,), dev_levels=(0.4,), seeds_per_condition=1, base_seed=11)
    (res,) = run_sweep(p, workers=1)
    m = compute_metrics(run_condition(p.lkas_config(2, 0.4), p, 11), 3.7)
    assert res.mean("sdlp") == m.sdlp and res.mean("srr") == m.srr and res.mean("rmsls") == m.rmsls
    assert math.isnan(res.sem("sdlp"))


def test_aggregate_matches_independent_recomputation():
    p = plan(tor_levels=(1, 3), dev_levels=(0.0,), seeds_per_condition=4)
    results = run_sweep(p, workers=1)
    for res in results:
        values = [compute_metrics(run_condition(res.config, p, s), 3.7).rmsls for s in p.seeds]
        assert res.mean("rmsls") == pytest.approx(sum(values) / len(values), rel=1e-12)
        mean = sum(values) / len(values)
        sd = math.sqrt(sum((v - mean) ** 2 for v in values) / (len(values) - 1))
        assert res.sem("rmsls") == pytest.approx(sd / 2.0, rel=1e-12)


def test_aborted_runs_are_excluded():
    cfg = LkasConfig(1, 0)
    ok = MetricSet(sdlp=1.0, srr=0.0, rmsls=2.0, departure_count=0, duration=1.0)
    recs = [RunRecord(1, cfg, 0, ok), RunRecord(1, cfg, 1, None, error="diverged"),
            RunRecord(1, cfg, 2, replace(ok, sdlp=3.0))]
    (res,) = run_sweep(plan(seeds_per_condition=3), records=iter(recs))
    assert res.mean("sdlp") == 2.0
    assert res.aborted == [(1, "diverged")]


def test_parallel_matches_serial(tmp_path):
    p = plan(session_duration=2.0, seeds_per_condition=2)
    paths = []
    for workers in (1, 3):
        out = tmp_path / f"m{workers}.csv"
        write_metrics_csv(run_sweep(p, workers=workers), out)
        paths.append(out.read_bytes())
    assert paths[0] == paths[1]


def test_iter_runs_order():
    p = plan(tor_levels=(1,), dev_levels=(0, 0.4), session_duration=1.0, seeds_per_condition=2,
             base_seed=5)
    assert [(r.condition_id, r.seed) for r in iter_runs(p, workers=1)] == [
        (1, 5), (1, 6), (2, 5), (2, 6)]


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("SSL_THREADS", "3")
    assert worker_count() == 3
    assert worker_count(1) == 1
    monkeypatch.setenv("SSL_THREADS", "many")
    with pytest.raises(ConfigurationError):
        worker_count()


def test_aggregate_csv_layout(tmp_path):
    p = plan(tor_levels=(2,), dev_levels=(0.0,), session_duration=2.0)
    out = tmp_path / "agg.csv"
    write_aggregate_csv(run_sweep(p, workers=1), out)
    lines = out.read_text().splitlines()
    assert lines[0] == "tor_nm,dev_m,metric,mean,sem,n"
    assert [l.split(",")[2] for l in lines[1:]] == ["sdlp", "srr", "rmsls", "departures"]


def test_plan_validation():
    with pytest.raises(ConfigurationError):
        ExperimentPlan(seeds_per_condition=0)
    with pytest.raises(ConfigurationError):
        ExperimentPlan(tor_levels=())
    assert ExperimentPlan().duration == 75.0


# ---- Latin square -----------------------------------------------------------

def adjacent_pairs(rows):
    return Counter((a, b) for row in rows for a, b in zip(row, row[1:]))


@pytest.mark.parametrize("n", range(2, 11))
def test_williams_properties(n):
    rows = balanced_latin_square(n)
    assert len(rows) == (n if n % 2 == 0 else 2 * n)
    for row in rows:
        assert sorted(row) == list(range(1, n + 1))
    reps = len(rows) // n
    for col in zip(*rows):
        assert Counter(col) == {c: reps for c in range(1, n + 1)}
    pairs = adjacent_pairs(rows)
    assert len(pairs) == n * (n - 1)
    assert set(pairs.values()) == {reps}


def test_latin_square_small_cases():
    assert balanced_latin_square(2) == [[1, 2], [2, 1]]
    assert len(balanced_latin_square(9)) == 18
    assert set(adjacent_pairs(balanced_latin_square(4)).values()) == {1}


def test_latin_square_rejects_small_n():
    for bad in (0, 1, -3):
        with pytest.raises(ValueError):
            balanced_latin_square(bad)


def test_participant_orders_cycle():
    orders = participant_orders(4, 6)
    assert orders[4] == orders[0] and len(orders) == 6


@pytest.mark.slow
def test_trends_hold_with_varied_perturbations():
    # jittered start headings make every seed a distinct run, so the paired
    # sign test below is not just counting mirror images
    from scipy.stats import binomtest

    scen = Scenario(initial_heading_deg=0.5, initial_heading_spread_deg=0.4)
    p = ExperimentPlan(seeds_per_condition=30, scenario=scen)

    def per_seed(tor, dev, metric):
        cfg = p.lkas_config(tor, dev)
        return np.array([getattr(compute_metrics(run_condition(cfg, p, s), 3.7), metric)
                         for s in p.seeds])

    tor_sdlp = [per_seed(t, 0.0, "sdlp") for t in (3.0, 2.0, 1.0)]
    dev_sdlp = [tor_sdlp[1]] + [per_seed(2.0, d, "sdlp") for d in (0.4, 0.8)]
    assert len(np.unique(np.round(tor_sdlp[0], 12))) > 10
    for lo, hi in [(tor_sdlp[0], tor_sdlp[1]), (tor_sdlp[1], tor_sdlp[2]),
                   (dev_sdlp[0], dev_sdlp[1]), (dev_sdlp[1], dev_sdlp[2])]:
        assert lo.mean() < hi.mean()
        wins = int(np.sum(lo < hi))
        assert binomtest(wins, len(lo), 0.5, alternative="greater").pvalue < 0.05
