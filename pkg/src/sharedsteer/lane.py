"""Straight-lane geometry and the steering-column / kinematic-bicycle plant.

Sign convention: lateral position, heading, steering angle and torque are all
positive to the left. A positive torque turns the wheel left, which yaws the
vehicle left and increases the lateral position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .errors import ConfigurationError, StateValidityError


@dataclass(frozen=True)
class LaneGeometry:
    lane_width: float = 3.7
    track_length: float = 1500.0

    def __post_init__(self):
        if not (self.lane_width > 0 and math.isfinite(self.lane_width)):
            raise ConfigurationError(f"lane_width must be > 0, got {self.lane_width}")
        if not (self.track_length > 0 and math.isfinite(self.track_length)):
            raise ConfigurationError(f"track_length must be > 0, got {self.track_length}")

    @property
    def half_width(self) -> float:
        """Distance from lane center to the departure boundary."""
        return self.lane_width / 2.0


@dataclass(frozen=True)
class PlantParams:
    column_inertia: float = 0.05
    column_damping: float = 1.0
    self_align_stiffness: float = 10.0
    steering_ratio: float = 15.0
    wheelbase: float = 2.7
    timestep: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"{f.name} must be finite and > 0, got {value}")
        if self.timestep > 0.01:
            raise ConfigurationError(f"timestep must be <= 0.01 s, got {self.timestep}")


@dataclass(frozen=True)
class VehicleState:
    time: float = 0.0
    longitudinal_position: float = 0.0
    lateral_position: float = 0.0
    heading: float = 0.0
    speed: float = 20.0
    steering_wheel_angle: float = 0.0
    steering_wheel_rate: float = 0.0

    def is_finite(self) -> bool:
        return all(math.isfinite(getattr(self, f.name)) for f in fields(self))

    def mirrored(self) -> VehicleState:
        """Reflect the state about the lane center."""
        return replace(
            self,
            lateral_position=-self.lateral_position,
            heading=-self.heading,
            steering_wheel_angle=-self.steering_wheel_angle,
            steering_wheel_rate=-self.steering_wheel_rate,
        )


def check_state(state: VehicleState) -> None:
    if not state.is_finite():
        raise StateValidityError(f"non-finite vehicle state: {state}")
    if state.speed < 0:
        raise StateValidityError(f"negative speed: {state.speed}")


def lateral_speed(state: VehicleState) -> float:
    return state.speed * math.sin(state.heading)


def step_plant(
    state: VehicleState,
    driver_torque: float,
    assist_torque: float,
    params: PlantParams,
    geom: LaneGeometry | None = None,
) -> VehicleState:
    """Advance the plant by one fixed timestep.

    The steering column is a damped second-order system driven by the sum of
    driver and assist torque, resisted by a self-aligning spring. The wheel
    angle feeds a kinematic bicycle at constant speed. The column is
    integrated semi-implicitly (new wheel rate moves the wheel angle), which
    keeps it stable at 100 Hz; heading and lateral position then advance with
    the average of their start- and end-of-step rates.

    ``geom`` is accepted for interface symmetry; a straight lane does not
    alter the dynamics.
    """
    check_state(state)
    if not (math.isfinite(driver_torque) and math.isfinite(assist_torque)):
        raise StateValidityError(
            f"non-finite torque input: driver={driver_torque}, assist={assist_torque}"
        )

    dt = params.timestep
    alpha = state.steering_wheel_angle
    alpha_rate = state.steering_wheel_rate
    torque = driver_torque + assist_torque

    alpha_acc = (
        torque - params.column_damping * alpha_rate - params.self_align_stiffness * alpha
    ) / params.column_inertia
    alpha_rate = alpha_rate + dt * alpha_acc
    alpha = alpha + dt * alpha_rate
    if not (math.isfinite(alpha) and math.isfinite(alpha_rate)):
        raise StateValidityError(f"steering column diverged: angle={alpha}, rate={alpha_rate}")

    # kinematic chain: trapezoidal average of the start- and end-of-step rates
    v = state.speed
    yaw_rate = v * (math.tan(state.steering_wheel_angle / params.steering_ratio)
                    + math.tan(alpha / params.steering_ratio)) / (2.0 * params.wheelbase)
    heading = state.heading + dt * yaw_rate
    lateral = state.lateral_position + dt * v * (math.sin(state.heading) + math.sin(heading)) / 2.0
    longitudinal = state.longitudinal_position + dt * v * (math.cos(state.heading) + math.cos(heading)) / 2.0

    return VehicleState(
        time=state.time + dt,
        longitudinal_position=longitudinal,
        lateral_position=lateral,
        heading=heading,
        speed=v,
        steering_wheel_angle=alpha,
        steering_wheel_rate=alpha_rate,
    )
