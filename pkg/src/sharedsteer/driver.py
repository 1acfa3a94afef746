"""Synthetic drivers: a feedback steering law and the distraction/recovery protocol."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError
from .lane import VehicleState


class DriverMode(str, enum.Enum):
    ATTENTIVE = "attentive"
    DISTRACTED = "distracted"


class Phase(str, enum.Enum):
    ENGAGED = "engaged"          # attentive driver, always steering
    DISTRACTED = "distracted"    # hands off, typing
    PENDING = "pending"          # departed, warning given, reaction delay running
    RECOVERING = "recovering"    # hands on, bringing the car back and holding it


@dataclass(frozen=True)
class DriverConfig:
    preview_gain: float = 1.0      # N·m per m of lateral offset
    heading_gain: float = 28.0     # N·m per rad of heading
    damping_gain: float = 0.05     # N·m·s per rad of wheel rate
    noise_std: float = 0.3         # N·m
    reaction_delay: float = 0.7    # s
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("preview_gain", "heading_gain", "damping_gain", "noise_std", "reaction_delay"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigurationError(f"{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class DistractionProtocol:
    mode: DriverMode = DriverMode.DISTRACTED
    departure_trigger: float = 1.85
    recenter_band: float = 0.2
    hold_duration: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "mode", DriverMode(self.mode))
        if not self.recenter_band >= 0:
            raise ConfigurationError(f"recenter_band must be >= 0, got {self.recenter_band}")
        if not self.departure_trigger > self.recenter_band:
            raise ConfigurationError("departure_trigger must exceed recenter_band")
        if not self.hold_duration >= 0:
            raise ConfigurationError(f"hold_duration must be >= 0, got {self.hold_duration}")


@dataclass(frozen=True)
class EngagementState:
    """Protocol phase plus the time the current timer started (``None`` when idle)."""

    phase: Phase
    since: float | None = None

    @property
    def engaged(self) -> bool:
        return self.phase in (Phase.ENGAGED, Phase.RECOVERING)


def initial_engagement(protocol: DistractionProtocol) -> EngagementState:
    if protocol.mode is DriverMode.ATTENTIVE:
        return EngagementState(Phase.ENGAGED)
    return EngagementState(Phase.DISTRACTED)


# timers compare accumulated float time against whole-second durations
_TIME_EPS = 1e-9


def update_engagement(
    protocol: DistractionProtocol,
    state: VehicleState,
    engagement: EngagementState,
    reaction_delay: float = 0.0,
) -> EngagementState:
    """Advance the distraction state machine given the latest vehicle state.

    DISTRACTED -> PENDING when ``|d| >= departure_trigger``; PENDING ->
    RECOVERING once ``reaction_delay`` has elapsed; RECOVERING -> DISTRACTED
    after the car has stayed inside ``recenter_band`` for ``hold_duration``
    without interruption. Leaving the band resets the hold timer.
    """
    if protocol.mode is DriverMode.ATTENTIVE:
        return EngagementState(Phase.ENGAGED)

    t = state.time
    offset = abs(state.lateral_position)
    phase = engagement.phase

    if phase is Phase.ENGAGED:
        # mode switched under us; start distracted
        phase, engagement = Phase.DISTRACTED, EngagementState(Phase.DISTRACTED)

    if phase is Phase.DISTRACTED:
        if offset >= protocol.departure_trigger:
            engagement = EngagementState(Phase.PENDING, t)
            phase = Phase.PENDING
        else:
            return engagement

    if phase is Phase.PENDING:
        if t - engagement.since >= reaction_delay - _TIME_EPS:
            # hold timer starts fresh when the driver takes the wheel
            return EngagementState(Phase.RECOVERING, None)
        return engagement

    # RECOVERING
    if offset > protocol.recenter_band:
        return replace(engagement, since=None)
    if engagement.since is None:
        engagement = EngagementState(Phase.RECOVERING, t)
    if t - engagement.since >= protocol.hold_duration - _TIME_EPS:
        return EngagementState(Phase.DISTRACTED)
    return engagement


def driver_torque(
    state: VehicleState,
    config: DriverConfig,
    engaged: bool,
    rng: np.random.Generator | None = None,
) -> float:
    """Steering torque from the synthetic driver; exactly zero when hands-off."""
    if not engaged:
        return 0.0
    torque = (
        -config.preview_gain * state.lateral_position
        - config.heading_gain * state.heading
        - config.damping_gain * state.steering_wheel_rate
    )
    if config.noise_std > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_std > 0")
        torque += config.noise_std * float(rng.standard_normal())
    return torque


class Driver:
    """Stateful driver for one run: owns the RNG stream and the protocol state."""

    def __init__(self, config: DriverConfig, protocol: DistractionProtocol):
        self.config = config
        self.protocol = protocol
        self.rng = np.random.default_rng(config.rng_seed)
        self.engagement = initial_engagement(protocol)

    def step(self, state: VehicleState) -> float:
        self.engagement = update_engagement(
            self.protocol, state, self.engagement, self.config.reaction_delay
        )
        return driver_torque(state, self.config, self.engagement.engaged, self.rng)
