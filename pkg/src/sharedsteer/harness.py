"""Closed-loop runs, the TOR x DEV sweep, aggregation, and counterbalanced orders."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .driver import DistractionProtocol, Driver, DriverConfig
from .errors import ConfigurationError, PlantDivergenceError, StateValidityError
from .lane import LaneGeometry, PlantParams, VehicleState, lateral_speed, step_plant
from .lkas import (
    DEFAULT_DEV_LEVELS,
    DEFAULT_TOR_LEVELS,
    LkasConfig,
    control_torque,
    predicted_deviation,
    strategy_grid,
)
from .metrics import METRIC_NAMES, MetricSet, TrajectoryLog, compute_metrics

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scenario:
    """Everything about a run except the LKAS strategy and the seed."""

    plant: PlantParams = field(default_factory=PlantParams)
    lane: LaneGeometry = field(default_factory=LaneGeometry)
    driver: DriverConfig = field(default_factory=DriverConfig)
    protocol: DistractionProtocol = field(default_factory=DistractionProtocol)
    speed: float = 20.0
    initial_heading_deg: float = 0.5  # magnitude; the sign is drawn from the seed
    initial_lateral: float = 0.0
    # optional uniform jitter on the magnitude; 0 makes seeds differ only in sign
    initial_heading_spread_deg: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.speed) and self.speed >= 0):
            raise ConfigurationError(f"speed must be >= 0, got {self.speed}")
        if not self.initial_heading_spread_deg >= 0:
            raise ConfigurationError("initial_heading_spread_deg must be >= 0")


@dataclass(frozen=True)
class ExperimentPlan:
    tor_levels: tuple = DEFAULT_TOR_LEVELS
    dev_levels: tuple = DEFAULT_DEV_LEVELS
    seeds_per_condition: int = 30
    session_duration: float | None = None  # None: drive the whole track
    participant_count: int = 18
    base_seed: int = 0
    scenario: Scenario = field(default_factory=Scenario)
    lkas_options: dict = field(default_factory=dict)  # preview_time, ref_heading, ...

    def __post_init__(self):
        object.__setattr__(self, "tor_levels", tuple(float(v) for v in self.tor_levels))
        object.__setattr__(self, "dev_levels", tuple(float(v) for v in self.dev_levels))
        if not self.tor_levels or not self.dev_levels:
            raise ConfigurationError("TOR and DEV level lists must be non-empty")
        if self.seeds_per_condition < 1:
            raise ConfigurationError("seeds_per_condition must be >= 1")
        if self.session_duration is not None and not self.session_duration > 0:
            raise ConfigurationError("session_duration must be > 0")
        if self.participant_count < 1:
            raise ConfigurationError("participant_count must be >= 1")

    @property
    def duration(self) -> float:
        if self.session_duration is not None:
            return self.session_duration
        if self.scenario.speed <= 0:
            raise ConfigurationError("session_duration is required when speed is 0")
        return self.scenario.lane.track_length / self.scenario.speed

    @property
    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.seeds_per_condition)]

    def conditions(self) -> list[LkasConfig]:
        return strategy_grid(self.tor_levels, self.dev_levels,
                             lane_width=self.scenario.lane.lane_width, **self.lkas_options)

    def lkas_config(self, k_tor: float, k_dev: float) -> LkasConfig:
        return LkasConfig(k_tor=k_tor, k_dev=k_dev,
                          lane_width=self.scenario.lane.lane_width, **self.lkas_options)


def initial_state(scenario: Scenario, seed: int) -> VehicleState:
    rng = np.random.default_rng((seed, 1))
    sign = 1.0 if rng.integers(2) else -1.0
    magnitude = scenario.initial_heading_deg
    if scenario.initial_heading_spread_deg:
        magnitude += scenario.initial_heading_spread_deg * rng.uniform(-1.0, 1.0)
    return VehicleState(
        lateral_position=scenario.initial_lateral,
        heading=sign * math.radians(magnitude),
        speed=scenario.speed,
    )


def run_condition(
    config: LkasConfig,
    plan: ExperimentPlan,
    seed: int,
    state0: VehicleState | None = None,
) -> TrajectoryLog:
    """Simulate one distracted-driving session under one assist strategy.

    Each sample records the state at the start of a step together with the
    torques applied over that step.
    """
    scenario = plan.scenario
    params = scenario.plant
    dt = params.timestep
    n = int(round(plan.duration / dt))
    if n < 2:
        raise ConfigurationError("session is shorter than two timesteps")

    state = state0 if state0 is not None else initial_state(scenario, seed)
    driver = Driver(replace(scenario.driver, rng_seed=seed), scenario.protocol)
    assist_on = config.enabled
    preview = config.preview_time

    cols = {name: np.empty(n) for name in
            ("lat_pos", "heading", "steer_angle", "driver_tq", "assist_tq", "lat_speed")}
    engaged = np.empty(n, dtype=bool)
    half_pi = math.pi / 2

    for i in range(n):
        tq_driver = driver.step(state)
        tq_assist = control_torque(predicted_deviation(state, preview), config) if assist_on else 0.0
        cols["lat_pos"][i] = state.lateral_position
        cols["heading"][i] = state.heading
        cols["steer_angle"][i] = state.steering_wheel_angle
        cols["driver_tq"][i] = tq_driver
        cols["assist_tq"][i] = tq_assist
        cols["lat_speed"][i] = lateral_speed(state)
        engaged[i] = driver.engagement.engaged
        try:
            state = step_plant(state, tq_driver, tq_assist, params, scenario.lane)
        except StateValidityError as exc:
            raise PlantDivergenceError(f"run diverged at t={state.time:.2f} s: {exc}") from exc
        if not state.is_finite() or abs(state.heading) >= half_pi:
            raise PlantDivergenceError(
                f"run diverged at t={state.time:.2f} s (k_TOR={config.k_tor}, "
                f"k_DEV={config.k_dev}, seed={seed}): {state}"
            )

    return TrajectoryLog(sample_rate=1.0 / dt, t=np.arange(n) * dt, engaged=engaged, **cols)


@dataclass(frozen=True)
class RunRecord:
    condition_id: int
    config: LkasConfig
    seed: int
    metrics: MetricSet | None
    log: TrajectoryLog | None = None
    error: str | None = None


@dataclass
class ConditionResult:
    condition_id: int
    config: LkasConfig
    runs: list = field(default_factory=list)      # (seed, MetricSet)
    aborted: list = field(default_factory=list)   # (seed, message)

    def values(self, metric: str) -> np.ndarray:
        attr = "departure_count" if metric == "departures" else metric
        return np.array([getattr(m, attr) for _, m in self.runs], dtype=float)

    def mean(self, metric: str) -> float:
        v = self.values(metric)
        return float(np.mean(v)) if len(v) else math.nan

    def sem(self, metric: str) -> float:
        """Standard error from the sample standard deviation; NaN below two runs."""
        v = self.values(metric)
        if len(v) < 2:
            return math.nan
        return float(np.std(v, ddof=1) / math.sqrt(len(v)))


def _run_task(args) -> RunRecord:
    condition_id, config, plan, seed, keep_log = args
    try:
        traj = run_condition(config, plan, seed)
    except PlantDivergenceError as exc:
        return RunRecord(condition_id, config, seed, None, error=str(exc))
    metrics = compute_metrics(traj, lane_width=plan.scenario.lane.lane_width)
    return RunRecord(condition_id, config, seed, metrics, traj if keep_log else None)


def worker_count(requested: int | None = None) -> int:
    """Parallelism: explicit request, else ``SSL_THREADS``, else the CPU count."""
    if requested is None:
        env = os.environ.get("SSL_THREADS")
        if env:
            try:
                requested = int(env)
            except ValueError:
                raise ConfigurationError(f"SSL_THREADS must be an integer, got {env!r}") from None
    if requested is None:
        requested = os.cpu_count() or 1
    return max(1, requested)


def iter_runs(plan: ExperimentPlan, workers: int | None = None, keep_logs: bool = False):
    """Yield one RunRecord per (condition, seed) in grid order, whatever the worker count."""
    tasks = [
        (cid, config, plan, seed, keep_logs)
        for cid, config in enumerate(plan.conditions(), start=1)
        for seed in plan.seeds
    ]
    workers = worker_count(workers)
    if workers == 1:
        for task in tasks:
            yield _run_task(task)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * workers)))


def run_sweep(plan: ExperimentPlan, workers: int | None = None, progress=None,
              records=None) -> list[ConditionResult]:
    """Run every grid cell for every seed and group the results by condition.

    Aborted runs are excluded from aggregates and logged. ``progress`` is called
    with each ConditionResult once its last seed finishes. ``records`` may be a
    pre-built RunRecord iterator (the CLI uses this to also stream trajectories).
    """
    results: dict[int, ConditionResult] = {}
    per_condition = plan.seeds_per_condition
    source = records if records is not None else iter_runs(plan, workers)
    for rec in source:
        res = results.setdefault(rec.condition_id, ConditionResult(rec.condition_id, rec.config))
        if rec.error is None:
            res.runs.append((rec.seed, rec.metrics))
        else:
            res.aborted.append((rec.seed, rec.error))
        if len(res.runs) + len(res.aborted) == per_condition and progress is not None:
            progress(res)
    ordered = [results[k] for k in sorted(results)]
    n_aborted = sum(len(r.aborted) for r in ordered)
    if n_aborted:
        log.warning("%d run(s) aborted and excluded from aggregates", n_aborted)
    return ordered


def balanced_latin_square(n: int) -> list[list[int]]:
    """Williams-design condition orders, conditions numbered from 1.

    Even ``n`` gives ``n`` rows; odd ``n`` needs the mirrored rows too (``2n``
    rows) before every ordered pair of neighbours occurs equally often.
    """
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise ValueError(f"need at least 2 conditions, got {n!r}")
    first = [(j + 1) // 2 if j % 2 else (n - j // 2) % n for j in range(n)]
    rows = [[(c + r) % n for c in first] for r in range(n)]
    if n % 2:
        rows += [row[::-1] for row in rows]
    return [[c + 1 for c in row] for row in rows]


def participant_orders(n_conditions: int, participants: int) -> list[list[int]]:
    """Assign Latin-square rows to participants, cycling through the square."""
    square = balanced_latin_square(n_conditions)
    return [square[i % len(square)] for i in range(participants)]


def write_latin_square(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(rows)


METRICS_HEADER = ("condition_id", "tor_nm", "dev_m", "seed", "sdlp", "srr", "rmsls",
                  "departures", "duration")
AGGREGATE_HEADER = ("tor_nm", "dev_m", "metric", "mean", "sem", "n")


def metrics_row(condition_id: int, config: LkasConfig, seed: int, m: MetricSet) -> list[str]:
    return [str(condition_id), repr(config.k_tor), repr(config.k_dev), str(seed),
            repr(m.sdlp), repr(m.srr), repr(m.rmsls), str(m.departure_count), repr(m.duration)]


def write_metrics_csv(results: list[ConditionResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for res in results:
            for seed, m in res.runs:
                writer.writerow(metrics_row(res.condition_id, res.config, seed, m))


def write_aggregate_csv(results: list[ConditionResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_HEADER)
        for res in results:
            for metric in METRIC_NAMES:
                writer.writerow([repr(res.config.k_tor), repr(res.config.k_dev), metric,
                                 repr(res.mean(metric)), repr(res.sem(metric)), str(len(res.runs))])
