"""Confidence-aware MPPI over the GP dynamics model.

Candidate setpoint sequences are rolled out by mean propagation through the
GP. Each trajectory is scored by ``sum_t gamma^t (r_t - lambda * sigma_t)``
with t starting at 1. Trajectories whose first-step predictive std exceeds
``flag_threshold`` are discarded before the exponentially weighted update;
if none survive, the rule-based action is returned instead.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import gp, sim
from .errors import NoValidTrajectoryError, ValidationError
from .gp import GpPosterior
from .sim import Action, ComfortBounds, SimState


@dataclass
class MppiConfig:
    num_samples: int = 1000
    horizon: int = 20
    discount: float = 0.99
    temperature: float = 1.0
    uncertainty_weight: float = 1e-2
    perturb_std: float = 1.0
    noise_correlation: float = 0.0
    action_bounds: tuple = (sim.SETPOINT_MIN, sim.SETPOINT_MAX)
    flag_threshold: float = float("inf")

    def __post_init__(self):
        if self.num_samples < 1 or self.horizon < 1:
            raise ValidationError("num_samples and horizon must be >= 1")
        if not 0 < self.discount <= 1:
            raise ValidationError(f"discount must be in (0, 1], got {self.discount}")
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")
        if self.uncertainty_weight < 0:
            raise ValidationError("uncertainty_weight must be >= 0")
        if not 0 <= self.noise_correlation < 1:
            raise ValidationError("noise_correlation must be in [0, 1)")
        if not self.flag_threshold > 0:
            raise ValidationError("flag_threshold must be positive")
        lo, hi = self.action_bounds
        if not lo < hi:
            raise ValidationError(f"action bounds not ordered: {self.action_bounds}")


@dataclass(frozen=True)
class Forecast:
    """Per-step disturbances over the horizon: weather (H, 4) and occupants (H,)."""

    weather: np.ndarray
    occupants: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weather, dtype=float))
        o = np.asarray(self.occupants, dtype=float).reshape(-1)
        if w.shape != (o.shape[0], 4):
            raise ValidationError(f"forecast weather shape {w.shape} does not match {o.shape[0]} occupant steps")
        object.__setattr__(self, "weather", w)
        object.__setattr__(self, "occupants", o)

    def __len__(self):
        return self.occupants.shape[0]

    @property
    def occupied(self) -> np.ndarray:
        return self.occupants > 0


@dataclass
class TrajectoryEval:
    action_seq: np.ndarray   # (H, 2)
    means: np.ndarray        # (H,)
    sigmas: np.ndarray       # (H,)
    rewards: np.ndarray      # (H,)
    score: float

    @property
    def first_step_sigma(self) -> float:
        return float(self.sigmas[0])


@dataclass(frozen=True)
class ControlDecision:
    action: Action
    fallback_used: bool
    survivors: int
    decision_time: float


def clamp_actions(actions: np.ndarray, bounds=(sim.SETPOINT_MIN, sim.SETPOINT_MAX)) -> np.ndarray:
    """Clip to bounds, then swap any (heat, cool) pair with heat > cool."""
    a = np.clip(actions, bounds[0], bounds[1])
    heat = np.minimum(a[..., 0], a[..., 1])
    cool = np.maximum(a[..., 0], a[..., 1])
    return np.stack([heat, cool], axis=-1)


def _discounts(cfg: MppiConfig, horizon: int) -> np.ndarray:
    return cfg.discount ** np.arange(1, horizon + 1)


def _step_inputs(temps: np.ndarray, actions_t: np.ndarray, weather_t: np.ndarray, occupants_t: float):
    k = temps.shape[0]
    X = np.empty((k, gp.INPUT_DIM))
    X[:, :4] = weather_t
    X[:, 4] = occupants_t
    X[:, gp.ZONE_TEMP_INDEX] = temps
    X[:, gp.HEAT_SP_INDEX:] = actions_t
    return X


def rollout_batch(post: GpPosterior, zone_temp: float, actions: np.ndarray, forecast: Forecast,
                  cfg: MppiConfig, bounds: ComfortBounds, first_step=None):
    """Roll out K action sequences (K, H, 2) from one start temperature.

    Returns ``(means, sigmas, rewards, scores)`` with shapes (K, H) and (K,).
    ``first_step`` may carry precomputed ``(mean, var)`` for t = 1.
    """
    actions = np.asarray(actions, dtype=float)
    K, H, _ = actions.shape
    if len(forecast) < H:
        raise ValidationError(f"forecast has {len(forecast)} steps, horizon is {H}")
    means = np.empty((K, H))
    sigmas = np.empty((K, H))
    temps = np.full(K, float(zone_temp))
    for t in range(H):
        if t == 0 and first_step is not None:
            mu, var = first_step
        else:
            X = _step_inputs(temps, actions[:, t], forecast.weather[t], forecast.occupants[t])
            mu, var = gp.predict_batch(post, X)
        means[:, t] = mu
        sigmas[:, t] = np.sqrt(var)
        temps = mu
    occ = forecast.occupied[:H]
    rewards = sim.reward_array(means, actions[..., 0], actions[..., 1], occ[None, :], bounds)
    disc = _discounts(cfg, H)
    scores = (disc * (rewards - cfg.uncertainty_weight * sigmas)).sum(axis=1)
    return means, sigmas, rewards, scores


def rollout(post: GpPosterior, s0: SimState, actions: np.ndarray, forecast: Forecast,
            cfg: MppiConfig, bounds: ComfortBounds) -> TrajectoryEval:
    actions = np.asarray(actions, dtype=float)
    means, sigmas, rewards, scores = rollout_batch(post, s0.zone_temp, actions[None], forecast, cfg, bounds)
    return TrajectoryEval(actions, means[0], sigmas[0], rewards[0], float(scores[0]))


def mppi_weights(scores: np.ndarray, temperature: float) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    s = np.where(np.isnan(s), -np.inf, s)
    if not np.any(np.isfinite(s)):
        raise NoValidTrajectoryError("all trajectory scores are -inf")
    w = np.exp((s - np.max(s[np.isfinite(s)])) / temperature)
    return w / w.sum()


def mppi_update(base: np.ndarray, perturbations: np.ndarray, scores: np.ndarray, temperature: float,
                bounds=(sim.SETPOINT_MIN, sim.SETPOINT_MAX)) -> np.ndarray:
    """Exponentially weighted perturbation average added to ``base``."""
    base = np.asarray(base, dtype=float)
    perturbations = np.asarray(perturbations, dtype=float)
    if perturbations.shape[1:] != base.shape or perturbations.shape[0] != len(scores):
        raise ValidationError(f"shape mismatch: base {base.shape}, perturbations {perturbations.shape}, "
                              f"{len(scores)} scores")
    w = mppi_weights(scores, temperature)
    return clamp_actions(base + np.tensordot(w, perturbations, axes=1), bounds)


def shift_plan(plan: np.ndarray) -> np.ndarray:
    """Receding-horizon warm start: drop the first step, repeat the last."""
    return np.concatenate([plan[1:], plan[-1:]], axis=0)


def sample_candidates(prev_plan: np.ndarray, cfg: MppiConfig, rng: np.random.Generator):
    """Perturbed, clamped candidate sequences and their effective perturbations."""
    noise = rng.normal(0.0, 1.0, size=(cfg.num_samples,) + prev_plan.shape)
    rho = cfg.noise_correlation
    if rho > 0:
        # stationary AR(1) along the horizon, same marginal std
        scale = np.sqrt(1.0 - rho * rho)
        for t in range(1, noise.shape[1]):
            noise[:, t] = rho * noise[:, t - 1] + scale * noise[:, t]
    noise *= cfg.perturb_std
    candidates = clamp_actions(prev_plan + noise, cfg.action_bounds)
    return candidates, candidates - prev_plan


def decide(post: GpPosterior, s0: SimState, prev_plan: np.ndarray, forecast: Forecast,
           cfg: MppiConfig, occupied: bool, bounds: ComfortBounds, rng: np.random.Generator):
    """One control step. Returns ``(ControlDecision, new_plan)``."""
    start = time.perf_counter()
    prev_plan = np.asarray(prev_plan, dtype=float)
    if prev_plan.shape != (cfg.horizon, 2):
        raise ValidationError(f"plan shape {prev_plan.shape}, expected ({cfg.horizon}, 2)")
    candidates, deltas = sample_candidates(prev_plan, cfg, rng)

    first_step = None
    keep = slice(None)
    if np.isfinite(cfg.flag_threshold):
        X0 = _step_inputs(np.full(cfg.num_samples, s0.zone_temp), candidates[:, 0],
                          forecast.weather[0], forecast.occupants[0])
        mu0, var0 = gp.predict_batch(post, X0)
        keep = np.flatnonzero(np.sqrt(var0) <= cfg.flag_threshold)
        first_step = (mu0[keep], var0[keep])
        if keep.size == 0:
            action = sim.rule_based_action(s0, occupied, bounds)
            decision = ControlDecision(action, True, 0, time.perf_counter() - start)
            return decision, shift_plan(prev_plan)

    _, _, _, scores = rollout_batch(post, s0.zone_temp, candidates[keep], forecast, cfg, bounds,
                                    first_step=first_step)
    plan = mppi_update(prev_plan, deltas[keep], scores, cfg.temperature, cfg.action_bounds)
    action = Action(float(plan[0, 0]), float(plan[0, 1]))
    survivors = int(scores.shape[0])
    decision = ControlDecision(action, False, survivors, time.perf_counter() - start)
    return decision, shift_plan(plan)
