"""TOML configuration: sections [sweep], [lane], [plant], [lkas], [driver].

Every key is optional; missing keys take the library defaults. Unknown keys
are rejected so that typos do not silently fall back to defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import tomli

from .driver import DistractionProtocol, DriverConfig
from .errors import ConfigurationError
from .harness import ExperimentPlan, Scenario
from .lane import LaneGeometry, PlantParams
from .lkas import DEFAULT_DEV_LEVELS, DEFAULT_TOR_LEVELS

# section -> key -> default
DEFAULTS = {
    "sweep": {
        "tor_levels": list(DEFAULT_TOR_LEVELS),
        "dev_levels": list(DEFAULT_DEV_LEVELS),
        "seeds": 30,
        "base_seed": 0,
        "session_duration_s": 0.0,  # 0 means track_length / speed
        "participants": 18,
    },
    "lane": {"lane_width_m": 3.7, "track_length_m": 1500.0},
    "plant": {
        "column_inertia": 0.05,
        "column_damping": 1.0,
        "self_align_stiffness": 10.0,
        "steering_ratio": 15.0,
        "wheelbase_m": 2.7,
        "timestep_s": 0.01,
        "speed_mps": 20.0,
    },
    "lkas": {
        "k_tor_nm": 2.0,
        "k_dev_m": 0.4,
        "preview_s": 1.0,
        "ref_heading_deg": 1.72,
        "ref_speed_mps": 20.0,
        "torque_cap_nm": 5.0,
    },
    "driver": {
        "mode": "distracted",
        "preview_gain": 1.0,
        "heading_gain": 28.0,
        "damping_gain": 0.05,
        "noise_std": 0.3,
        "reaction_delay_s": 0.7,
        "seed": 0,
        "departure_trigger_m": 1.85,
        "recenter_band_m": 0.2,
        "hold_s": 3.0,
        "initial_heading_deg": 0.5,
        "initial_heading_spread_deg": 0.0,
    },
}


@dataclass(frozen=True)
class Settings:
    values: dict

    @classmethod
    def defaults(cls) -> Settings:
        return cls({s: dict(v) for s, v in DEFAULTS.items()})

    def get(self, section: str, key: str):
        return self.values[section][key]

    def with_overrides(self, **by_section) -> Settings:
        merged = {s: dict(v) for s, v in self.values.items()}
        for section, pairs in by_section.items():
            if section not in DEFAULTS:
                raise ConfigurationError(f"unknown config section [{section}]")
            if not isinstance(pairs, dict):
                raise ConfigurationError(f"[{section}] must be a table")
            for key, value in pairs.items():
                if value is not None:
                    merged[section][key] = value
        return Settings(_validated(merged))

    # ---- builders -----------------------------------------------------------

    def lane(self) -> LaneGeometry:
        s = self.values["lane"]
        return LaneGeometry(lane_width=s["lane_width_m"], track_length=s["track_length_m"])

    def plant(self) -> PlantParams:
        s = self.values["plant"]
        return PlantParams(
            column_inertia=s["column_inertia"],
            column_damping=s["column_damping"],
            self_align_stiffness=s["self_align_stiffness"],
            steering_ratio=s["steering_ratio"],
            wheelbase=s["wheelbase_m"],
            timestep=s["timestep_s"],
        )

    def driver(self) -> DriverConfig:
        s = self.values["driver"]
        return DriverConfig(
            preview_gain=s["preview_gain"],
            heading_gain=s["heading_gain"],
            damping_gain=s["damping_gain"],
            noise_std=s["noise_std"],
            reaction_delay=s["reaction_delay_s"],
            rng_seed=s["seed"],
        )

    def protocol(self) -> DistractionProtocol:
        s = self.values["driver"]
        try:
            return DistractionProtocol(
                mode=s["mode"],
                departure_trigger=s["departure_trigger_m"],
                recenter_band=s["recenter_band_m"],
                hold_duration=s["hold_s"],
            )
        except ValueError as exc:
            raise ConfigurationError(f"[driver]: {exc}") from exc

    def lkas_options(self) -> dict:
        s = self.values["lkas"]
        return {
            "preview_time": s["preview_s"],
            "ref_heading": math.radians(s["ref_heading_deg"]),
            "ref_speed": s["ref_speed_mps"],
            "torque_cap": s["torque_cap_nm"],
        }

    def plan(self) -> ExperimentPlan:
        sweep = self.values["sweep"]
        scenario = Scenario(
            plant=self.plant(),
            lane=self.lane(),
            driver=self.driver(),
            protocol=self.protocol(),
            speed=self.values["plant"]["speed_mps"],
            initial_heading_deg=self.values["driver"]["initial_heading_deg"],
            initial_heading_spread_deg=self.values["driver"]["initial_heading_spread_deg"],
        )
        return ExperimentPlan(
            tor_levels=tuple(sweep["tor_levels"]),
            dev_levels=tuple(sweep["dev_levels"]),
            seeds_per_condition=sweep["seeds"],
            session_duration=sweep["session_duration_s"] or None,
            participant_count=sweep["participants"],
            base_seed=sweep["base_seed"],
            scenario=scenario,
            lkas_options=self.lkas_options(),
        )

    def to_toml(self) -> str:
        """Deterministic TOML rendering of the fully resolved settings."""
        out = []
        for section in DEFAULTS:
            out.append(f"[{section}]")
            for key in DEFAULTS[section]:
                out.append(f"{key} = {_toml_value(self.values[section][key])}")
            out.append("")
        return "\n".join(out)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot render {value!r} as TOML")


def _validated(values: dict) -> dict:
    for section, pairs in values.items():
        if section not in DEFAULTS:
            raise ConfigurationError(f"unknown config section [{section}]")
        if not isinstance(pairs, dict):
            raise ConfigurationError(f"[{section}] must be a table")
        for key, value in pairs.items():
            if key not in DEFAULTS[section]:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]")
            default = DEFAULTS[section][key]
            pairs[key] = _coerce(section, key, value, default)
    return values


def _coerce(section, key, value, default):
    where = f"[{section}] {key}"
    if isinstance(default, bool) or isinstance(value, bool):
        if not isinstance(value, bool) or not isinstance(default, bool):
            raise ConfigurationError(f"{where}: expected {type(default).__name__}, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigurationError(f"{where}: expected a list of numbers, got {value!r}")
        return [float(v) for v in value]
    raise ConfigurationError(f"{where}: unsupported value {value!r}")


def load_settings(path=None) -> Settings:
    """Defaults, overlaid with the TOML file at ``path`` if given."""
    settings = Settings.defaults()
    if path is None:
        return settings
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"invalid TOML in {path}: {exc}") from exc
    return settings.with_overrides(**data)
