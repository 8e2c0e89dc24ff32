"""Closed-loop episodes, metrics, studies and persistence."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, control, gp, learning, sim, threshold
from .control import MppiConfig
from .errors import ConfigError, SimulatorDivergenceError, ValidationError
from .gp import Dataset, KernelParams
from .sim import ComfortBounds, SimState, ZoneParams

log = logging.getLogger(__name__)

CONTROLLERS = ("clue", "clue_no_cb", "rule_based")
FIT_FILTERS = ("none", "in_band")
VIOLATION_TOL = 1e-6  # degC; thermostat lands on setpoints up to rounding
EXPLORE_HEAT_MAX = 25.0
DECISION_HEADER = ["fallback", "survivors", "decision_time_s"]


@dataclass
class EpisodeConfig:
    days: int = 30
    season: str = "winter"
    weather_profile: str = "continental"
    weather_seed: int | None = None
    weather_path: str | None = None
    zone: ZoneParams = field(default_factory=ZoneParams)
    controller: str = "clue"
    mppi: MppiConfig = field(default_factory=MppiConfig)
    fit_size: int = 700
    fit_filter: str = "none"
    calibrate_scale: bool = True
    initial_temp: float | None = None
    seed: int = 0
    model_path: str | None = None
    history_path: str | None = None

    def __post_init__(self):
        if isinstance(self.zone, dict):
            self.zone = ZoneParams(**self.zone)
        if isinstance(self.mppi, dict):
            self.mppi = MppiConfig(**self.mppi)
        if self.days < 1:
            raise ConfigError(f"days must be >= 1, got {self.days}")
        if self.season not in sim.SEASON_BOUNDS:
            raise ConfigError(f"season: unknown value {self.season!r}")
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller: unknown value {self.controller!r}")
        if self.fit_filter not in FIT_FILTERS:
            raise ConfigError(f"fit_filter: unknown value {self.fit_filter!r}")
        if self.fit_size < 1:
            raise ConfigError("fit_size must be >= 1")

    @property
    def bounds(self) -> ComfortBounds:
        return ComfortBounds.for_season(self.season)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mppi"]["action_bounds"] = list(d["mppi"]["action_bounds"])
        if not np.isfinite(d["mppi"]["flag_threshold"]):
            d["mppi"]["flag_threshold"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        d = dict(d)
        if isinstance(d.get("zone"), dict):
            zone_known = {f.name for f in dataclasses.fields(ZoneParams)}
            bad = set(d["zone"]) - zone_known
            if bad:
                raise ConfigError(f"unknown zone keys: {', '.join(sorted(bad))}")
        if isinstance(d.get("mppi"), dict):
            m = dict(d["mppi"])
            mppi_known = {f.name for f in dataclasses.fields(MppiConfig)}
            bad = set(m) - mppi_known
            if bad:
                raise ConfigError(f"unknown mppi keys: {', '.join(sorted(bad))}")
            if "flag_threshold" in m:
                m["flag_threshold"] = float(m["flag_threshold"])
            if "action_bounds" in m:
                m["action_bounds"] = tuple(m["action_bounds"])
            d["mppi"] = m
        try:
            return cls(**d)
        except (TypeError, ValidationError) as exc:
            raise ConfigError(str(exc)) from None

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("seed")
        d.pop("weather_seed")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EpisodeResult:
    cumulative_reward: float
    violation_rate: float
    energy_kwh: float
    fallback_rate: float
    mean_decision_time: float
    p95_decision_time: float
    steps: int
    trace: np.ndarray = field(repr=False, default=None)
    decisions: np.ndarray = field(repr=False, default=None)
    trace_path: str | None = None

    def summary(self) -> dict:
        d = {k: v for k, v in dataclasses.asdict(self).items() if k not in ("trace", "decisions")}
        return d


def episode_weather(cfg: EpisodeConfig) -> sim.WeatherSeries:
    if cfg.weather_path:
        series = sim.load_weather(cfg.weather_path)
        steps = cfg.days * 24 * 60 // series.timestep
        if len(series) < steps:
            raise ConfigError(f"weather_path {cfg.weather_path} has {len(series)} rows, need {steps}")
        return series
    seed = cfg.seed if cfg.weather_seed is None else cfg.weather_seed
    return sim.synth_weather(seed, cfg.days + 1, cfg.weather_profile, cfg.season, timestep=cfg.zone.timestep)


def _forecast(records: np.ndarray, occupants: np.ndarray, i: int, horizon: int) -> control.Forecast:
    idx = np.minimum(np.arange(i, i + horizon), records.shape[0] - 1)
    return control.Forecast(records[idx], occupants[idx])


def transitions_to_dataset(rows: np.ndarray) -> Dataset:
    rows = np.atleast_2d(rows)
    return Dataset(rows[:, :8], rows[:, 8])


def select_fit_rows(history: np.ndarray, size: int, fit_filter: str = "none",
                    bounds: ComfortBounds | None = None) -> np.ndarray:
    """Most recent ``size`` transitions, optionally only those inside the comfort band."""
    rows = np.atleast_2d(history)
    if fit_filter == "in_band":
        if bounds is None:
            raise ConfigError("in_band fit filter needs comfort bounds")
        t, t_next = rows[:, 5], rows[:, 8]
        mask = (t >= bounds.lower) & (t <= bounds.upper) & (t_next >= bounds.lower) & (t_next <= bounds.upper)
        rows = rows[mask]
    if rows.shape[0] == 0:
        raise ConfigError("no history rows left for the fit set")
    return rows[-size:]


def collect_history(zp: ZoneParams, weather: sim.WeatherSeries, season: str, steps: int | None = None,
                    excitation_std: float = 0.0, seed: int = 0, initial_temp: float | None = None,
                    explore_prob: float = 0.0, explore_width: float = 3.0) -> np.ndarray:
    """Transition log of the rule-based controller.

    ``excitation_std`` adds seeded Gaussian dither to both setpoints;
    ``explore_prob`` replaces the action, with that probability, by a random
    heating setpoint drawn from [15, 25] degC and a cooling setpoint up to
    ``explore_width`` above it. Without either, the setpoint
    columns take only two distinct values and carry no information about
    how setpoints move the zone temperature.
    """
    bounds = ComfortBounds.for_season(season)
    rng = np.random.default_rng(seed)
    records = weather.records()
    n = len(weather) if steps is None else steps
    if n > len(weather):
        raise ConfigError(f"weather has {len(weather)} steps, {n} requested")
    T0 = initial_temp if initial_temp is not None else 0.5 * (bounds.lower + bounds.upper)
    state = SimState(T0, 0, season)
    rows = np.empty((n, len(sim.TRANSITION_HEADER)))
    for i in range(n):
        occ = sim.occupancy_at(i, zp.timestep, weather.start_weekday)
        occupied = occ > 0
        a = sim.rule_based_action(state, occupied, bounds)
        if explore_prob > 0 and rng.random() < explore_prob:
            heat = rng.uniform(sim.SETPOINT_MIN, EXPLORE_HEAT_MAX)
            cool = min(sim.SETPOINT_MAX, heat + rng.uniform(0.0, explore_width))
            a = sim.Action(float(heat), float(cool))
        elif excitation_std > 0:
            sp = control.clamp_actions(a.as_array() + rng.normal(0.0, excitation_std, 2))
            a = sim.Action(float(sp[0]), float(sp[1]))
        nxt, energy = sim.simulate_step(zp, state, a, records[i], occ)
        reward = sim.compute_reward(nxt.zone_temp, a, occupied, bounds)
        rows[i] = [*records[i], occ, state.zone_temp, a.heat_setpoint, a.cool_setpoint,
                   nxt.zone_temp, energy, reward, float(occupied)]
        state = nxt
    return rows


def result_from_trace(trace: np.ndarray, decisions: np.ndarray, season: str) -> EpisodeResult:
    """Recompute every episode metric from the persisted trace."""
    bounds = ComfortBounds.for_season(season)
    trace = np.atleast_2d(trace)
    decisions = np.atleast_2d(decisions)
    n = trace.shape[0]
    next_temp = trace[:, 8]
    occupied = trace[:, 11] > 0
    viol = np.maximum(0.0, next_temp - bounds.upper) + np.maximum(0.0, bounds.lower - next_temp)
    violating = occupied & (viol > VIOLATION_TOL)
    times = decisions[:, 2]
    return EpisodeResult(
        cumulative_reward=float(np.sum(trace[:, 10])),
        violation_rate=float(np.sum(violating) / n),
        energy_kwh=float(np.sum(trace[:, 9])),
        fallback_rate=float(np.mean(decisions[:, 0])),
        mean_decision_time=float(np.mean(times)),
        p95_decision_time=float(np.percentile(times, 95)),
        steps=n,
        trace=trace,
        decisions=decisions,
    )


def build_posterior(kernel: KernelParams, history: np.ndarray, cfg: EpisodeConfig) -> gp.GpPosterior:
    rows = select_fit_rows(history, cfg.fit_size, cfg.fit_filter, cfg.bounds)
    data = transitions_to_dataset(rows)
    if cfg.calibrate_scale:
        kernel = learning.calibrate_signal_variance(kernel, data)
    return gp.fit(kernel, data)


def run_episode(cfg: EpisodeConfig, kernel: KernelParams | None = None, history: np.ndarray | None = None,
                posterior: gp.GpPosterior | None = None, out_dir: str | Path | None = None) -> EpisodeResult:
    """Run one closed-loop episode at the configured cadence.

    The GP variants need either a ``posterior`` or a ``kernel`` plus
    ``history`` transitions to fit on (or ``model_path``/``history_path`` in
    the config).
    """
    bounds = cfg.bounds
    zp = cfg.zone
    if cfg.controller != "rule_based" and posterior is None:
        if kernel is None:
            if not cfg.model_path or not Path(cfg.model_path).exists():
                raise ConfigError(f"model artifact not found: {cfg.model_path}")
            kernel = load_kernel(cfg.model_path)
        if history is None:
            if not cfg.history_path or not Path(cfg.history_path).exists():
                raise ConfigError(f"history artifact not found: {cfg.history_path}")
            history = sim.load_transitions(cfg.history_path)
        posterior = build_posterior(kernel, history, cfg)
    mcfg = cfg.mppi
    if cfg.controller == "clue_no_cb":
        mcfg = dataclasses.replace(mcfg, flag_threshold=float("inf"))

    weather = episode_weather(cfg)
    records = weather.records()
    steps = cfg.days * 24 * 60 // zp.timestep
    occupants = np.array([sim.occupancy_at(i, zp.timestep, weather.start_weekday)
                          for i in range(len(weather))], dtype=float)
    rng = np.random.default_rng(cfg.seed)
    T0 = cfg.initial_temp if cfg.initial_temp is not None else 0.5 * (bounds.lower + bounds.upper)
    state = SimState(T0, 0, cfg.season)
    plan = np.tile(sim.rule_based_action(state, occupants[0] > 0, bounds).as_array(), (mcfg.horizon, 1))

    trace = np.empty((steps, len(sim.TRANSITION_HEADER)))
    decisions = np.empty((steps, 3))
    for i in range(steps):
        occ = occupants[i]
        occupied = bool(occ > 0)
        if cfg.controller == "rule_based":
            t0 = time.perf_counter()
            action = sim.rule_based_action(state, occupied, bounds)
            decisions[i] = [0.0, 0.0, time.perf_counter() - t0]
        else:
            fc = _forecast(records, occupants, i, mcfg.horizon)
            decision, plan = control.decide(posterior, state, plan, fc, mcfg, occupied, bounds, rng)
            action = decision.action
            decisions[i] = [float(decision.fallback_used), decision.survivors, decision.decision_time]
        try:
            nxt, energy = sim.simulate_step(zp, state, action, records[i], occ)
        except SimulatorDivergenceError:
            if out_dir is not None:
                _persist_trace(Path(out_dir), trace[:i], decisions[:i])
            raise
        reward = sim.compute_reward(nxt.zone_temp, action, occupied, bounds)
        trace[i] = [*records[i], occ, state.zone_temp, action.heat_setpoint, action.cool_setpoint,
                    nxt.zone_temp, energy, reward, float(occupied)]
        state = nxt
    result = result_from_trace(trace, decisions, cfg.season)
    if out_dir is not None:
        result.trace_path = str(_persist_trace(Path(out_dir), trace, decisions))
    return result


def _persist_trace(out_dir: Path, trace: np.ndarray, decisions: np.ndarray) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "transitions.csv"
    sim.save_transitions(trace, path)
    with open(out_dir / "decisions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DECISION_HEADER)
        for row in decisions:
            writer.writerow([int(row[0]), int(row[1]), repr(float(row[2]))])
    return path


def load_trace(out_dir) -> tuple[np.ndarray, np.ndarray]:
    out_dir = Path(out_dir)
    trace = sim.load_transitions(out_dir / "transitions.csv")
    decisions = np.loadtxt(out_dir / "decisions.csv", delimiter=",", skiprows=1, ndmin=2)
    return trace, decisions


# -- artifacts -----------------------------------------------------------------

def save_kernel(params: KernelParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=1))


def load_kernel(path) -> KernelParams:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"model artifact not found: {path}")
    try:
        return KernelParams.from_dict(json.loads(path.read_text()))
    except (KeyError, ValueError, ValidationError) as exc:
        raise ConfigError(f"{path}: invalid kernel artifact ({exc})") from None


def write_manifest(out_dir, cfg: EpisodeConfig | None, seeds: Sequence[int], artifacts: dict,
                   extra: dict | None = None) -> Path:
    manifest = {
        "tool_version": __version__,
        "config_hash": cfg.config_hash() if cfg is not None else None,
        "seeds": list(seeds),
        "artifacts": {k: str(v) for k, v in artifacts.items()},
    }
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def append_jsonl(path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


# -- synthetic data pipeline ------------------------------------------------------

STEPS_PER_DAY = 96


def zone_family(count: int, seed: int) -> list[ZoneParams]:
    """RC zones with resistance, capacitance, HVAC capacity and gains varied around the defaults."""
    rng = np.random.default_rng(seed)
    zones = []
    for _ in range(count):
        zones.append(ZoneParams(
            thermal_resistance=float(rng.uniform(3.0, 8.0)),
            thermal_capacitance=float(rng.uniform(1.2, 3.5)),
            hvac_max_heat=float(rng.uniform(4.0, 9.0)),
            hvac_max_cool=float(rng.uniform(4.0, 9.0)),
            occupant_gain=float(rng.uniform(0.07, 0.13)),
            solar_aperture=float(rng.uniform(2.0, 6.0)),
        ))
    return zones


def synth_history(zp: ZoneParams, days: int, season: str = "winter", profile: str = "continental",
                  seed: int = 0, explore_prob: float = 0.2) -> np.ndarray:
    """Weather plus a rule-based transition log with occasional exploratory setpoints."""
    weather = sim.synth_weather(seed, days, profile, season, timestep=zp.timestep)
    return collect_history(zp, weather, season, seed=seed + 1, explore_prob=explore_prob)


def thin_rows(rows: np.ndarray, max_rows: int | None) -> np.ndarray:
    """Keep at most ``max_rows`` rows by a uniform stride, preserving time order."""
    rows = np.atleast_2d(rows)
    if max_rows is None or rows.shape[0] <= max_rows:
        return rows
    idx = np.linspace(0, rows.shape[0] - 1, max_rows).round().astype(int)
    return rows[idx]


def task_from_rows(rows: np.ndarray, label: str = "", max_rows: int | None = 400) -> learning.TrainTask:
    return learning.TrainTask.from_dataset(transitions_to_dataset(thin_rows(rows, max_rows)), label)


def source_tasks(count: int = 8, days: int = 7, seed: int = 0, season: str = "winter",
                 max_rows: int | None = 300, explore_prob: float = 0.2) -> learning.TaskSet:
    """Meta-training tasks: one history per zone of a randomized RC family."""
    tasks = []
    for i, zp in enumerate(zone_family(count, seed)):
        rows = synth_history(zp, days, season, seed=seed * 1000 + 10 * i, explore_prob=explore_prob)
        tasks.append(task_from_rows(rows, f"zone{i}", max_rows))
    return learning.TaskSet(tuple(tasks), seed)


def fine_tune_on_days(meta_init: KernelParams, history: np.ndarray, days: int,
                      cfg: learning.LearnConfig | None = None, iterations: int = 200,
                      max_rows: int | None = 400) -> KernelParams:
    """Fine-tune on the most recent ``days`` of ``history``; ``days == 0`` returns the meta-init."""
    if days < 0:
        raise ValidationError(f"fine-tune days must be >= 0, got {days}")
    if days == 0:
        return meta_init
    rows = history[-days * STEPS_PER_DAY:]
    if rows.shape[0] < days * STEPS_PER_DAY:
        raise ConfigError(f"history has {history.shape[0]} rows, {days} days requested")
    return learning.fine_tune(meta_init, task_from_rows(rows, f"{days}d", max_rows), cfg, iterations)


def translate_from_history(kernel: KernelParams, history: np.ndarray, e_star: float, fit_size: int = 700,
                           calibrate: bool = True, fit_filter: str = "none",
                           season: str = "winter") -> threshold.TranslationResult:
    """Fit on the earlier rows, collect error records on the later ones, translate e*.

    The fit set is selected exactly as for an episode (same size and filter),
    so the threshold matches the posterior the controller will use.
    """
    history = np.atleast_2d(history)
    n_eval = max(1, min(history.shape[0] // 3, STEPS_PER_DAY * 3))
    fit_rows = select_fit_rows(history[:-n_eval], fit_size, fit_filter, ComfortBounds.for_season(season))
    data = transitions_to_dataset(fit_rows)
    if calibrate:
        kernel = learning.calibrate_signal_variance(kernel, data)
    post = gp.fit(kernel, data)
    records = threshold.collect_error_records(post, transitions_to_dataset(history[-n_eval:]))
    return threshold.translate_threshold(records, e_star)


# -- studies ---------------------------------------------------------------------

def _cell_seed(base: int, *parts: int) -> int:
    return int(np.random.SeedSequence([base, *parts]).generate_state(1)[0])


def data_efficiency_study(fine_tune_days: Sequence[int], base_cfg: EpisodeConfig, meta_init: KernelParams,
                          history: np.ndarray, seeds: Sequence[int] = (0,), iterations: int = 200,
                          learn_cfg: learning.LearnConfig | None = None, max_rows: int | None = 400,
                          results_path=None) -> list[dict]:
    """Cumulative reward after fine-tuning on increasing amounts of target data.

    For every fine-tune horizon the kernel is adapted on that many recent
    days of ``history``, the GP is fitted on the configured number of most
    recent points and a full episode is run. Each row records its seed so
    the cell can be rerun on its own.
    """
    rows = []
    for seed in seeds:
        for days in fine_tune_days:
            kernel = fine_tune_on_days(meta_init, history, int(days), learn_cfg, iterations, max_rows)
            cfg = dataclasses.replace(base_cfg, seed=_cell_seed(seed, int(days)),
                                      weather_seed=base_cfg.weather_seed if base_cfg.weather_seed is not None
                                      else seed)
            res = run_episode(cfg, kernel=kernel, history=history)
            row = {"seed": seed, "cell_seed": cfg.seed, "weather_seed": cfg.weather_seed,
                   "fine_tune_days": int(days), **res.summary()}
            rows.append(row)
            log.info("efficiency seed=%s days=%s reward=%.2f", seed, days, res.cumulative_reward)
            if results_path is not None:
                append_jsonl(results_path, row)
    return rows


def threshold_knob_study(epsilons: Sequence[float], base_cfg: EpisodeConfig, kernel: KernelParams,
                         history: np.ndarray, seeds: Sequence[int] = (0,), results_path=None) -> list[dict]:
    """One clue episode per flag threshold with everything else held fixed."""
    rows = []
    for seed in seeds:
        post = build_posterior(kernel, history, base_cfg)
        for eps in epsilons:
            mppi = dataclasses.replace(base_cfg.mppi, flag_threshold=float(eps))
            cfg = dataclasses.replace(base_cfg, controller="clue", mppi=mppi, seed=seed,
                                      weather_seed=base_cfg.weather_seed if base_cfg.weather_seed is not None
                                      else seed)
            res = run_episode(cfg, posterior=post)
            row = {"seed": seed, "epsilon": float(eps), **res.summary()}
            rows.append(row)
            if results_path is not None:
                append_jsonl(results_path, row)
    return rows


def controller_comparison(base_cfg: EpisodeConfig, kernel: KernelParams | None, history: np.ndarray | None,
                          controllers: Sequence[str] = CONTROLLERS, seeds: Sequence[int] = (0,),
                          results_path=None) -> list[dict]:
    """Run each controller on the same weather and fit set for every seed."""
    rows = []
    post = None
    if any(c != "rule_based" for c in controllers):
        post = build_posterior(kernel, history, base_cfg)
    for seed in seeds:
        for ctrl in controllers:
            cfg = dataclasses.replace(base_cfg, controller=ctrl, seed=seed,
                                      weather_seed=base_cfg.weather_seed if base_cfg.weather_seed is not None
                                      else seed)
            res = run_episode(cfg, posterior=post)
            row = {"seed": seed, "controller": ctrl, **res.summary()}
            rows.append(row)
            if results_path is not None:
                append_jsonl(results_path, row)
    return rows


def summarize(rows: Sequence[dict], key: str, metrics=("cumulative_reward", "violation_rate", "energy_kwh",
                                                       "fallback_rate", "mean_decision_time")) -> list[dict]:
    """Mean and sample std of each metric grouped by ``key``."""
    groups: dict = {}
    for row in rows:
        groups.setdefault(row[key], []).append(row)
    table = []
    for k, members in groups.items():
        out = {key: k, "n": len(members)}
        for m in metrics:
            vals = np.array([r[m] for r in members], dtype=float)
            out[f"{m}_mean"] = float(vals.mean())
            out[f"{m}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        table.append(out)
    return table


def write_table_csv(rows: Sequence[dict], path) -> Path:
    path = Path(path)
    if not rows:
        path.write_text("")
        return path
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path
