"""Shared steering control simulator: LKAS torque strategies, synthetic
distracted drivers, driving-performance metrics, and quadratic response
surfaces for choosing intervention torque and deadband."""

__version__ = "0.1.0"

from .driver import DistractionProtocol, Driver, DriverConfig, driver_torque, update_engagement
from .harness import (
    ConditionResult,
    ExperimentPlan,
    Scenario,
    balanced_latin_square,
    run_condition,
    run_sweep,
)
from .lane import LaneGeometry, PlantParams, VehicleState, lateral_speed, step_plant
from .lkas import LkasConfig, control_torque, predicted_deviation, reference_deviation, strategy_grid
from .metrics import MetricSet, TrajectoryLog, compute_metrics, departures, rmsls, sdlp, srr
from .surface import (
    SATISFACTION_SURFACE,
    QuadraticSurface,
    RegressionModel,
    TermBasis,
    best_subsets,
    contour_grid,
    fit_ols,
    mallows_cp,
    stationary_point,
)
