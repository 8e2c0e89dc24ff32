"""Meta-learn a kernel initialization on a zone family, then fine-tune on a new zone.

Run: python demos/meta_learning.py
"""
from __future__ import annotations

import numpy as np

from hvac_gp import harness, learning
from hvac_gp.gp import KernelParams


def main(seed: int = 0):
    cfg = learning.LearnConfig()
    tasks = harness.source_tasks(count=8, days=7, seed=seed)
    losses: list = []
    meta = learning.meta_learn(tasks, cfg, history=losses)
    print(f"meta-learning ran {len(losses)} outer iterations, "
          f"batch loss {np.mean(losses[:10]):.4f} -> {np.mean(losses[-10:]):.4f}")

    # a zone the meta-learner never saw, with one day of data to adapt on
    zone = harness.zone_family(1, 10_000 + seed)[0]
    rows = harness.synth_history(zone, 2, seed=20_000 + seed)
    fit = harness.transitions_to_dataset(rows[:96])
    next_day = harness.transitions_to_dataset(rows[96:])
    fine = learning.TrainTask.from_dataset(fit, "target")
    held = learning.TrainTask(fit, next_day, "next day")

    random_init = KernelParams.random_init(np.random.default_rng(seed), noise_var=cfg.noise_var)
    for name, init in (("meta-init", meta), ("random init", random_init)):
        tuned = learning.fine_tune(init, fine, cfg)
        print(f"{name:>12}: next-day MSE after fine-tuning {learning.task_loss(tuned, held):.4f}")


if __name__ == "__main__":
    main()
