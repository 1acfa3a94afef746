"""Driving-performance measures computed from fixed-rate trajectory logs."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import InsufficientDataError

TRAJECTORY_COLUMNS = (
    "t", "lat_pos", "heading", "steer_angle",
    "driver_tq", "assist_tq", "lat_speed", "engaged",
)
METRIC_NAMES = ("sdlp", "srr", "rmsls", "departures")


@dataclass(frozen=True, eq=False)
class TrajectoryLog:
    """Column-oriented time series of one run. Angles in radians, SI elsewhere."""

    sample_rate: float
    t: np.ndarray
    lat_pos: np.ndarray
    heading: np.ndarray
    steer_angle: np.ndarray
    driver_tq: np.ndarray
    assist_tq: np.ndarray
    lat_speed: np.ndarray
    engaged: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        for name in TRAJECTORY_COLUMNS:
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name!r} has length {len(getattr(self, name))}, expected {n}")
        if n < 2:
            raise InsufficientDataError(f"trajectory log needs at least 2 samples, got {n}")
        if not (self.sample_rate > 0 and math.isfinite(self.sample_rate)):
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        steps = np.diff(self.t)
        if np.any(steps <= 0):
            raise ValueError("log time must be strictly increasing")
        if not np.allclose(steps, 1.0 / self.sample_rate, rtol=1e-6, atol=1e-9):
            raise ValueError("log is not uniformly sampled at sample_rate")

    def __len__(self):
        return len(self.t)

    @property
    def duration(self) -> float:
        """Record length: one sample period per sample."""
        return len(self.t) / self.sample_rate

    @classmethod
    def from_arrays(cls, sample_rate: float, t0: float = 0.0, **columns) -> TrajectoryLog:
        """Build a log from whichever columns are given; the rest are zero-filled."""
        n = len(next(iter(columns.values())))
        data = {name: np.zeros(n) for name in TRAJECTORY_COLUMNS}
        data["t"] = t0 + np.arange(n) / sample_rate
        data["engaged"] = np.zeros(n, dtype=bool)
        for name, values in columns.items():
            if name not in data:
                raise TypeError(f"unknown trajectory column {name!r}")
            data[name] = np.asarray(values, dtype=bool if name == "engaged" else float)
        return cls(sample_rate=float(sample_rate), **data)

    def reversed(self) -> TrajectoryLog:
        return TrajectoryLog(sample_rate=self.sample_rate, t=self.t.copy(),
                             **{c: getattr(self, c)[::-1].copy() for c in TRAJECTORY_COLUMNS[1:]})

    def concatenated(self, other: TrajectoryLog) -> TrajectoryLog:
        if other.sample_rate != self.sample_rate:
            raise ValueError("cannot concatenate logs with different sample rates")
        n = len(self) + len(other)
        cols = {c: np.concatenate([getattr(self, c), getattr(other, c)]) for c in TRAJECTORY_COLUMNS[1:]}
        return TrajectoryLog(sample_rate=self.sample_rate,
                             t=self.t[0] + np.arange(n) / self.sample_rate, **cols)


@dataclass(frozen=True)
class MetricSet:
    sdlp: float
    srr: float
    rmsls: float
    departure_count: int
    duration: float

    def as_dict(self) -> dict:
        return asdict(self)


def sdlp(log: TrajectoryLog) -> float:
    """Population standard deviation of lateral position about its own mean."""
    if len(log) < 2:
        raise InsufficientDataError("SDLP needs at least 2 samples")
    return float(np.std(log.lat_pos))


def rmsls(log: TrajectoryLog) -> float:
    if len(log) == 0:
        raise InsufficientDataError("RMSLS needs at least 1 sample")
    return float(np.sqrt(np.mean(np.square(log.lat_speed))))


def departures(log: TrajectoryLog, lane_width: float = 3.7) -> int:
    """Count entries into the region beyond the lane edge (``|d| > lane_width/2``).

    A log that starts outside counts that first excursion.
    """
    outside = np.abs(log.lat_pos) > lane_width / 2.0
    rising = outside[1:] & ~outside[:-1]
    return int(rising.sum() + outside[0])


def lowpass_steering(log: TrajectoryLog, cutoff: float = 0.6, order: int = 2) -> np.ndarray:
    """Zero-phase Butterworth-filtered steering angle, in degrees."""
    angle = np.degrees(log.steer_angle)
    nyquist = log.sample_rate / 2.0
    if cutoff >= nyquist:
        return angle.copy()
    b, a = signal.butter(order, cutoff, btype="low", fs=log.sample_rate)
    padlen = min(3 * max(len(a), len(b)), len(angle) - 1)
    return signal.filtfilt(b, a, angle, padlen=padlen)


def stationary_indices(x: np.ndarray) -> np.ndarray:
    """Indices of the end points and of every local extremum of ``x``.

    Flat runs are collapsed: a change of slope sign across a plateau yields one
    extremum at the plateau's first sample.
    """
    n = len(x)
    slope = np.sign(np.diff(x))
    nz = np.flatnonzero(slope)
    if len(nz) == 0:
        return np.array([0, n - 1]) if n > 1 else np.array([0])
    turns = nz[1:][slope[nz[1:]] != slope[nz[:-1]]]
    # a turn at diff-index j means x[j] is where the new slope begins; the
    # extremum sits right after the last nonzero step of the previous slope
    prev = nz[np.searchsorted(nz, turns) - 1]
    extrema = prev + 1
    return np.concatenate([[0], extrema, [n - 1]])


def count_gap_reversals(values, gap: float) -> int:
    """Count upward and downward reversals of at least ``gap`` in an extremum sequence.

    Each direction keeps a running reference point: a reversal is counted when
    the signal moves ``gap`` beyond the reference against the previous motion,
    otherwise the reference follows the signal to its new extreme.
    """
    values = list(values)
    if not values:
        return 0
    count = 0
    ref = values[0]
    for v in values[1:]:
        if v - ref >= gap:
            count += 1
            ref = v
        elif v < ref:
            ref = v
    ref = values[0]
    for v in values[1:]:
        if ref - v >= gap:
            count += 1
            ref = v
        elif v > ref:
            ref = v
    return count


def count_rate_reversals(values, times, rate_threshold: float) -> int:
    """Count extremum-to-extremum movements faster on average than ``rate_threshold``."""
    values = np.asarray(values)
    times = np.asarray(times)
    if len(values) < 2:
        return 0
    rates = np.abs(np.diff(values)) / np.diff(times)
    return int(np.count_nonzero(rates >= rate_threshold))


def srr(
    log: TrajectoryLog,
    gap_threshold: float = 1.0,
    cutoff: float = 0.6,
    method: str = "gap",
    rate_threshold: float = 1.0,
) -> float:
    """Steering reversal rate in reversals per second.

    The steering angle is low-pass filtered (second-order Butterworth, applied
    forward and backward), reduced to its sequence of stationary points, and
    reversals are counted on that sequence. ``method="gap"`` counts
    direction changes of at least ``gap_threshold`` degrees; ``method="rate"``
    counts extremum-to-extremum movements whose mean speed is at least
    ``rate_threshold`` degrees per second.
    """
    if gap_threshold <= 0:
        raise ValueError(f"gap_threshold must be > 0, got {gap_threshold}")
    duration = log.duration
    if not duration > 0:
        raise InsufficientDataError("SRR needs a log with positive duration")
    filtered = lowpass_steering(log, cutoff)
    idx = stationary_indices(filtered)
    if method == "gap":
        count = count_gap_reversals(filtered[idx], gap_threshold)
    elif method == "rate":
        count = count_rate_reversals(filtered[idx], log.t[idx], rate_threshold)
    else:
        raise ValueError(f"unknown SRR method {method!r}")
    return count / duration


def compute_metrics(log: TrajectoryLog, lane_width: float = 3.7, **srr_kwargs) -> MetricSet:
    return MetricSet(
        sdlp=sdlp(log),
        srr=srr(log, **srr_kwargs),
        rmsls=rmsls(log),
        departure_count=departures(log, lane_width),
        duration=log.duration,
    )


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_trajectory_csv(log: TrajectoryLog, path) -> None:
    cols = [getattr(log, c) for c in TRAJECTORY_COLUMNS]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for row in zip(*cols):
            writer.writerow(_fmt(v) for v in row)


def read_trajectory_csv(path) -> TrajectoryLog:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRAJECTORY_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{Path(path).name}: missing columns {sorted(missing)}")
        rows = list(reader)
    if len(rows) < 2:
        raise InsufficientDataError(f"{Path(path).name}: need at least 2 samples, got {len(rows)}")
    data = {c: np.array([float(r[c]) for r in rows]) for c in TRAJECTORY_COLUMNS}
    data["engaged"] = data["engaged"] != 0
    t = data["t"]
    sample_rate = (len(t) - 1) / (t[-1] - t[0])
    return TrajectoryLog(sample_rate=float(sample_rate), **data)
