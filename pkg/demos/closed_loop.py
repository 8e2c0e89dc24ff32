"""Run the rule-based thermostat and the GP controllers for two days.

Run: python demos/closed_loop.py
"""
from __future__ import annotations

import dataclasses

from hvac_gp import harness, learning, sim
from hvac_gp.control import MppiConfig
from hvac_gp.gp import KernelParams
from hvac_gp.harness import EpisodeConfig


def main():
    history = harness.synth_history(sim.ZoneParams(), 7, seed=5)
    task = harness.task_from_rows(history, "target", 300)
    kernel = learning.kernel_learn(KernelParams.identity(), task, learning.LearnConfig(iterations=150))

    base = EpisodeConfig(days=2, mppi=MppiConfig(num_samples=100, horizon=10), fit_size=300,
                         fit_filter="in_band", weather_seed=11)
    post = harness.build_posterior(kernel, history, base)
    # far from the fit data the predictive std saturates at the prior std, so
    # a threshold above sqrt(theta_scale) can never flag anything
    print(f"prior std of the fitted GP: {post.params.theta_scale ** 0.5:.3f} degC")
    for e_star in (1.0, 0.5):
        tr = harness.translate_from_history(kernel, history, e_star, fit_size=300, fit_filter="in_band")
        print(f"translated threshold for e* = {e_star} degC: epsilon = {tr.epsilon:.3f}")
    base = dataclasses.replace(base, mppi=dataclasses.replace(base.mppi, flag_threshold=tr.epsilon))
    rows = harness.controller_comparison(base, kernel, history)
    print(f"{'controller':>11}  reward    violations  kWh     fallback  ms/step")
    for r in rows:
        print(f"{r['controller']:>11}  {r['cumulative_reward']:8.2f}  {r['violation_rate']:9.3f}  "
              f"{r['energy_kwh']:6.1f}  {r['fallback_rate']:8.2f}  {1e3 * r['mean_decision_time']:6.1f}")


if __name__ == "__main__":
    main()
