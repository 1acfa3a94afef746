"""Lane keeping assist: predicted deviation and the deadband-linear torque law."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .errors import ConfigurationError
from .lane import VehicleState

DEFAULT_TOR_LEVELS = (1.0, 2.0, 3.0)
DEFAULT_DEV_LEVELS = (0.0, 0.4, 0.8)


@dataclass(frozen=True)
class LkasConfig:
    """Torque strategy parameters.

    ``k_tor`` is the torque produced when the predicted deviation reaches the
    reference deviation; ``k_dev`` is the deadband half-width below which no
    torque is applied. The reference deviation is derived from the remaining
    fields: the predicted deviation of a vehicle sitting on the lane edge with
    heading ``ref_heading`` at ``ref_speed``.

    ``k_tor == 0`` is accepted and means the assist is switched off.
    """

    k_tor: float
    k_dev: float
    preview_time: float = 1.0
    ref_heading: float = math.radians(1.72)
    ref_speed: float = 20.0
    lane_width: float = 3.7
    torque_cap: float = 5.0

    def __post_init__(self):
        values = (self.k_tor, self.k_dev, self.preview_time, self.ref_heading,
                  self.ref_speed, self.lane_width, self.torque_cap)
        if not all(math.isfinite(v) for v in values):
            raise ConfigurationError("LKAS parameters must be finite")
        if self.k_tor < 0:
            raise ConfigurationError(f"k_TOR must be >= 0, got {self.k_tor}")
        if self.k_dev < 0:
            raise ConfigurationError(f"k_DEV must be >= 0, got {self.k_dev}")
        if self.preview_time <= 0:
            raise ConfigurationError(f"preview time must be > 0, got {self.preview_time}")
        if self.lane_width <= 0:
            raise ConfigurationError(f"lane width must be > 0, got {self.lane_width}")
        if self.ref_speed < 0:
            raise ConfigurationError(f"reference speed must be >= 0, got {self.ref_speed}")
        if self.torque_cap <= 0:
            raise ConfigurationError(f"torque cap must be > 0, got {self.torque_cap}")
        d_ref = reference_deviation(self)
        if not self.k_dev < d_ref:
            raise ConfigurationError(
                f"k_DEV must be < d_ref ({self.k_dev:g} m >= {d_ref:.4f} m)"
            )

    @property
    def d_ref(self) -> float:
        return reference_deviation(self)

    @property
    def slope(self) -> float:
        """Torque gain outside the deadband, N·m per meter of predicted deviation."""
        return self.k_tor / (self.d_ref - self.k_dev)

    @property
    def enabled(self) -> bool:
        return self.k_tor > 0


def predicted_deviation(state: VehicleState, preview_time: float) -> float:
    """Lateral position extrapolated ``preview_time`` seconds along the current heading."""
    return state.speed * preview_time * math.sin(state.heading) + state.lateral_position


def reference_deviation(config: LkasConfig) -> float:
    return (config.ref_speed * config.preview_time * math.sin(config.ref_heading)
            + config.lane_width / 2.0)


def control_torque(d_pre: float, config: LkasConfig) -> float:
    """Assist torque for a predicted deviation.

    Zero inside ``|d_pre| <= k_dev``; outside, grows linearly so that it equals
    ``k_tor`` at ``|d_pre| == d_ref``, capped at ``torque_cap``. The sign always
    steers back toward the lane center.
    """
    d_ref = reference_deviation(config)
    if not d_ref > config.k_dev:
        raise ConfigurationError(
            f"k_DEV must be < d_ref ({config.k_dev:g} m >= {d_ref:.4f} m)"
        )
    excess = abs(d_pre) - config.k_dev
    if excess <= 0.0:
        return 0.0
    if abs(d_pre) == d_ref:
        # hit the anchor exactly instead of through the division round-off
        magnitude = config.k_tor
    else:
        magnitude = config.k_tor * excess / (d_ref - config.k_dev)
    magnitude = min(magnitude, config.torque_cap)
    return -magnitude if d_pre > 0 else magnitude


def strategy_grid(tor_levels, dev_levels, **overrides) -> list[LkasConfig]:
    """TOR-major Cartesian product of torque and deadband levels."""
    tor_levels = list(tor_levels)
    dev_levels = list(dev_levels)
    if not tor_levels or not dev_levels:
        raise ConfigurationError("TOR and DEV level lists must be non-empty")
    return [
        LkasConfig(k_tor=float(tor), k_dev=float(dev), **overrides)
        for tor, dev in itertools.product(tor_levels, dev_levels)
    ]
