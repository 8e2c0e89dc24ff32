"""Fit a GP to one-step zone transitions and look at its predictive spread.

Run: python demos/gp_basics.py
"""
from __future__ import annotations

import numpy as np

from hvac_gp import gp, harness, learning, sim
from hvac_gp.gp import KernelParams


def main():
    rows = harness.synth_history(sim.ZoneParams(), days=4, seed=1)
    fit = harness.transitions_to_dataset(rows[:288])
    test = harness.transitions_to_dataset(rows[288:])
    print(f"{len(fit)} fit transitions, {len(test)} test transitions, {fit.inputs.shape[1]} inputs each")

    # identity lengthscales on standardized inputs are a reasonable start
    params = learning.calibrate_signal_variance(KernelParams.identity(), fit)
    post = gp.fit(params, fit)
    mu, var = gp.predict_batch(post, test.inputs)
    err = np.abs(test.targets - mu)
    print(f"untrained kernel: test RMSE {np.sqrt(np.mean(err ** 2)):.3f} degC")

    task = learning.TrainTask.from_dataset(fit, "demo")
    learned = learning.kernel_learn(KernelParams.identity(), task, learning.LearnConfig(iterations=150))
    post = gp.fit(learning.calibrate_signal_variance(learned, fit), fit)
    mu, var = gp.predict_batch(post, test.inputs)
    err = np.abs(test.targets - mu)
    sigma = np.sqrt(var)
    print(f"learned kernel:   test RMSE {np.sqrt(np.mean(err ** 2)):.3f} degC")

    # the predictive std should rise where the errors are larger
    order = np.argsort(sigma)
    low, high = order[: len(order) // 2], order[len(order) // 2:]
    print(f"mean |error| on the half with smaller std: {err[low].mean():.3f}")
    print(f"mean |error| on the half with larger std:  {err[high].mean():.3f}")


if __name__ == "__main__":
    main()
