"""Single-zone RC thermal surrogate, reward, default controller and weather I/O.

Physics per step (``dt`` in hours)::

    passive = (T_out - T) / R + occupants * occupant_gain + aperture * radiation / 1000
    T_next  = T + dt / C * (passive + q_hvac)
    energy  = |q_hvac| * dt / cop

The thermostat is a deadband on the temperature the zone would reach with the
HVAC off: below the heating setpoint it heats, above the cooling setpoint it
cools, each with just enough power to land on the setpoint, saturated at the
equipment capacity. Humidity and wind are carried in the weather records but
do not enter the physics.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import SimulatorDivergenceError, ValidationError

SETPOINT_MIN = 15.0
SETPOINT_MAX = 30.0
TEMP_SANITY = (-20.0, 60.0)

WEATHER_HEADER = ["timestamp", "drybulb_c", "rh_pct", "wind_ms", "radiation_wm2"]
TRANSITION_HEADER = [
    "drybulb_c", "rh_pct", "wind_ms", "radiation_wm2", "occupants", "zone_temp_c",
    "heat_sp_c", "cool_sp_c", "next_zone_temp_c", "energy_kwh", "reward", "occupied",
]


@dataclass(frozen=True)
class ZoneParams:
    thermal_resistance: float = 5.0   # K/kW
    thermal_capacitance: float = 2.0  # kWh/K
    hvac_max_heat: float = 6.0        # kW
    hvac_max_cool: float = 6.0        # kW
    cop: float = 3.0
    occupant_gain: float = 0.1        # kW/person
    solar_aperture: float = 4.0       # m^2
    timestep: int = 15                # minutes

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValidationError(f"ZoneParams.{name} must be positive, got {value}")
        if 60 % self.timestep:
            raise ValidationError(f"timestep {self.timestep} does not divide 60")

    @property
    def dt_hours(self) -> float:
        return self.timestep / 60.0


@dataclass(frozen=True)
class ComfortBounds:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValidationError(f"comfort bounds not ordered: {self.lower} >= {self.upper}")

    @classmethod
    def for_season(cls, season: str) -> "ComfortBounds":
        try:
            return SEASON_BOUNDS[season]
        except KeyError:
            raise ValidationError(f"unknown season {season!r}") from None


SEASON_BOUNDS = {
    "winter": ComfortBounds(20.0, 23.5),
    "summer": ComfortBounds(23.0, 26.0),
}


@dataclass(frozen=True)
class Action:
    heat_setpoint: float
    cool_setpoint: float

    def __post_init__(self):
        h, c = self.heat_setpoint, self.cool_setpoint
        if not (SETPOINT_MIN <= h <= SETPOINT_MAX and SETPOINT_MIN <= c <= SETPOINT_MAX):
            raise ValidationError(f"setpoints ({h}, {c}) outside [{SETPOINT_MIN}, {SETPOINT_MAX}]")
        if h > c:
            raise ValidationError(f"heat setpoint {h} above cool setpoint {c}")

    def as_array(self) -> np.ndarray:
        return np.array([self.heat_setpoint, self.cool_setpoint])


@dataclass(frozen=True)
class SimState:
    zone_temp: float
    step_index: int = 0
    season: str = "winter"

    def __post_init__(self):
        lo, hi = TEMP_SANITY
        if not (math.isfinite(self.zone_temp) and lo <= self.zone_temp <= hi):
            raise SimulatorDivergenceError(
                f"zone temperature {self.zone_temp} outside sanity bounds [{lo}, {hi}]")
        if self.season not in SEASON_BOUNDS:
            raise ValidationError(f"unknown season {self.season!r}")


def simulate_step(zp: ZoneParams, s: SimState, a: Action, w, occupants: float):
    """Advance one timestep. ``w`` is (drybulb, rh, wind, radiation)."""
    t_out, _, _, radiation = (float(v) for v in w)
    dt, C, R = zp.dt_hours, zp.thermal_capacitance, zp.thermal_resistance
    T = s.zone_temp
    passive = (t_out - T) / R + occupants * zp.occupant_gain + zp.solar_aperture * radiation / 1000.0
    free_float = T + dt / C * passive
    if free_float < a.heat_setpoint:
        q = min(zp.hvac_max_heat, C * (a.heat_setpoint - T) / dt - passive)
    elif free_float > a.cool_setpoint:
        q = -min(zp.hvac_max_cool, passive - C * (a.cool_setpoint - T) / dt)
    else:
        q = 0.0
    T_next = T + dt / C * (passive + q)
    lo, hi = TEMP_SANITY
    if not (math.isfinite(T_next) and lo <= T_next <= hi):
        raise SimulatorDivergenceError(f"zone temperature {T_next} at step {s.step_index + 1}")
    energy = abs(q) * dt / zp.cop
    return SimState(T_next, s.step_index + 1, s.season), energy


def setpoint_effort(zone_temp: float, a: Action) -> float:
    """L1 distance between the setpoints and the zone temperature."""
    return abs(a.heat_setpoint - zone_temp) + abs(a.cool_setpoint - zone_temp)


def comfort_violation(zone_temp: float, bounds: ComfortBounds) -> float:
    return max(0.0, zone_temp - bounds.upper) + max(0.0, bounds.lower - zone_temp)


def compute_reward(zone_temp: float, a: Action, occupied: bool, bounds: ComfortBounds) -> float:
    w_e = 0.1 if occupied else 1.0
    return -w_e * setpoint_effort(zone_temp, a) - (1.0 - w_e) * comfort_violation(zone_temp, bounds)


def reward_array(zone_temp, heat, cool, occupied, bounds: ComfortBounds):
    """Vectorized ``compute_reward`` over broadcastable arrays."""
    zone_temp = np.asarray(zone_temp, dtype=float)
    w_e = np.where(occupied, 0.1, 1.0)
    effort = np.abs(heat - zone_temp) + np.abs(cool - zone_temp)
    viol = np.maximum(0.0, zone_temp - bounds.upper) + np.maximum(0.0, bounds.lower - zone_temp)
    return -w_e * effort - (1.0 - w_e) * viol


def rule_based_action(s: SimState | None, occupied: bool, bounds: ComfortBounds) -> Action:
    """Comfort band while occupied, full setback otherwise."""
    if occupied:
        return Action(bounds.lower, bounds.upper)
    return Action(SETPOINT_MIN, SETPOINT_MAX)


def occupancy_at(step_index: int, timestep: int = 15, start_weekday: int = 0) -> int:
    """Four occupants 08:00-18:00 on weekdays. Step 0 is midnight of ``start_weekday`` (0=Monday)."""
    minutes = step_index * timestep
    day, minute_of_day = divmod(minutes, 24 * 60)
    weekday = (start_weekday + day) % 7
    if weekday >= 5:
        return 0
    return 4 if 8 * 60 <= minute_of_day < 18 * 60 else 0


# -- weather ---------------------------------------------------------------

@dataclass(frozen=True)
class WeatherSeries:
    start: datetime
    timestep: int
    drybulb: np.ndarray
    rh: np.ndarray
    wind: np.ndarray
    radiation: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("drybulb", "rh", "wind", "radiation"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        n = arrays["drybulb"].shape[0]
        for name, arr in arrays.items():
            if arr.shape[0] != n:
                raise ValidationError(f"weather field {name} has length {arr.shape[0]}, expected {n}")
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise ValidationError(f"weather field {name} is not finite at index {bad[0]}")
        for name, mask in (("rh", (arrays["rh"] < 0) | (arrays["rh"] > 100)),
                           ("wind", arrays["wind"] < 0),
                           ("radiation", arrays["radiation"] < 0)):
            bad = np.flatnonzero(mask)
            if bad.size:
                raise ValidationError(f"weather field {name} out of range at index {bad[0]}")
        if self.timestep <= 0 or 60 % self.timestep:
            raise ValidationError(f"weather timestep {self.timestep} does not divide 60")

    def __len__(self):
        return self.drybulb.shape[0]

    def records(self) -> np.ndarray:
        """(n, 4) array of (drybulb, rh, wind, radiation)."""
        return np.column_stack([self.drybulb, self.rh, self.wind, self.radiation])

    def timestamps(self) -> list[datetime]:
        step = timedelta(minutes=self.timestep)
        return [self.start + i * step for i in range(len(self))]

    @property
    def start_weekday(self) -> int:
        return self.start.weekday()


# season-dependent (mean, diurnal amplitude) of outdoor drybulb, degC
_PROFILES = {
    "continental": {"winter": (-1.0, 4.0, 72.0, 350.0), "summer": (23.0, 5.0, 65.0, 850.0)},
    "desert": {"winter": (12.0, 8.0, 35.0, 600.0), "summer": (32.0, 8.0, 20.0, 1000.0)},
}
_DEFAULT_START = {"winter": datetime(2021, 1, 4), "summer": datetime(2021, 7, 5)}


def _smooth_noise(rng: np.random.Generator, n: int, dt_hours: float, tau_hours: float, std: float):
    phi = math.exp(-dt_hours / tau_hours)
    innov = rng.normal(0.0, std * math.sqrt(1 - phi * phi), size=n)
    out = np.empty(n)
    x = rng.normal(0.0, std)
    for i in range(n):
        x = phi * x + innov[i]
        out[i] = x
    return out


def synth_weather(seed: int, days: int, profile: str = "continental", season: str = "winter",
                  start: datetime | None = None, timestep: int = 15) -> WeatherSeries:
    """Sinusoidal diurnal weather with seeded AR(1) perturbations."""
    if days < 1:
        raise ValidationError(f"days must be >= 1, got {days}")
    try:
        t_mean, t_amp, rh_mean, rad_peak = _PROFILES[profile][season]
    except KeyError:
        raise ValidationError(f"unknown weather profile/season {profile!r}/{season!r}") from None
    rng = np.random.default_rng(seed)
    dt = timestep / 60.0
    n = days * 24 * 60 // timestep
    hours = np.arange(n) * dt % 24.0

    drybulb = (t_mean + t_amp * np.sin(2 * np.pi * (hours - 9.0) / 24.0)
               + _smooth_noise(rng, n, dt, 36.0, 2.5) + _smooth_noise(rng, n, dt, 3.0, 0.5))
    rh = np.clip(rh_mean - 2.0 * (drybulb - t_mean) + _smooth_noise(rng, n, dt, 6.0, 8.0), 5.0, 100.0)
    wind = np.abs(3.5 + _smooth_noise(rng, n, dt, 8.0, 1.5))
    daylight = (6.0, 18.0) if season == "summer" else (7.5, 16.5)
    sun = np.clip(np.sin(np.pi * (hours - daylight[0]) / (daylight[1] - daylight[0])), 0.0, None)
    sun[(hours < daylight[0]) | (hours > daylight[1])] = 0.0
    cloud = np.clip(0.75 + _smooth_noise(rng, n, dt, 10.0, 0.25), 0.15, 1.0)
    radiation = rad_peak * sun * cloud
    return WeatherSeries(start or _DEFAULT_START[season], timestep, drybulb, rh, wind, radiation)


def save_weather(series: WeatherSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(WEATHER_HEADER)
        for ts, row in zip(series.timestamps(), series.records()):
            writer.writerow([ts.isoformat()] + [repr(float(v)) for v in row])


def load_weather(path) -> WeatherSeries:
    """Parse a weather CSV (header ``timestamp,drybulb_c,rh_pct,wind_ms,radiation_wm2``)."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != WEATHER_HEADER:
            raise ValidationError(f"{path}: expected header {','.join(WEATHER_HEADER)}, got {header}")
        stamps, values = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(WEATHER_HEADER):
                raise ValidationError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                stamps.append(datetime.fromisoformat(row[0]))
                values.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    if not stamps:
        raise ValidationError(f"{path}: no weather rows")
    if len(stamps) > 1:
        step = stamps[1] - stamps[0]
        timestep = int(step.total_seconds() // 60)
        for i in range(1, len(stamps)):
            if stamps[i] - stamps[i - 1] != step or step.total_seconds() <= 0:
                raise ValidationError(f"{path}: timestamps not at a fixed increasing cadence at index {i}")
    else:
        timestep = 15
    arr = np.array(values)
    return WeatherSeries(stamps[0], timestep, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


# -- transition logs ---------------------------------------------------------

def save_transitions(rows: np.ndarray, path) -> None:
    rows = np.atleast_2d(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRANSITION_HEADER)
        for row in rows:
            out = [repr(float(v)) for v in row[:-1]]
            out.append(str(int(row[-1])))
            writer.writerow(out)


def load_transitions(path) -> np.ndarray:
    """Read a transition log into an (n, 12) float array, validating each row."""
    from .gp import validate_input_vectors

    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRANSITION_HEADER:
            raise ValidationError(f"{path}: expected header {','.join(TRANSITION_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(TRANSITION_HEADER):
                raise ValidationError(f"{path}:{lineno}: expected {len(TRANSITION_HEADER)} fields")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValidationError(f"{path}: no transitions")
    arr = np.array(rows)
    validate_input_vectors(arr[:, :8])
    return arr
