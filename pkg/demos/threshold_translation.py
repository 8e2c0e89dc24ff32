"""Turn a model-error bound in degC into a predictive-std threshold.

Run: python demos/threshold_translation.py
"""
from __future__ import annotations

from hvac_gp import harness, learning, sim
from hvac_gp.gp import KernelParams


def main():
    history = harness.synth_history(sim.ZoneParams(), 14, seed=3)
    task = harness.task_from_rows(history[:7 * 96], "target")
    kernel = learning.kernel_learn(KernelParams.identity(), task, learning.LearnConfig(iterations=150))

    print(" e*   epsilon  accuracy  precision  recall")
    for e_star in (0.3, 0.5, 1.0, 1.5):
        res = harness.translate_from_history(kernel, history, e_star, fit_size=300)
        print(f"{e_star:4.1f}  {res.epsilon:7.3f}  {res.accuracy:8.3f}  {res.precision:9.3f}  {res.recall:6.3f}")
    print("a looser error bound needs less confidence, so epsilon grows with e*")


if __name__ == "__main__":
    main()
