"""Recover the couplings of a three-site chain from simulated measurements.

A small problem that runs in a few minutes: generate shots from a random
target, fit from a few random starts, and compare the best fit with the target.
Run with ``python3 demos/learn_three_sites.py``.
"""

from __future__ import annotations

import numpy as np

from hamlearn import HeisenbergModel, OptimizerConfig, draw_target, generate_dataset, multi_start
from hamlearn.data import protocol_times
from hamlearn.experiments import relative_error
from hamlearn.learner import AdamConfig


def main():
    n = 3
    model = HeisenbergModel(n)
    theta_star = draw_target(n, 1).to_theta()
    print("target:", np.round(theta_star, 3))

    dataset = generate_dataset(model, theta_star, protocol_times(3), (6, 3), 400, "exact", rng_seed=4)
    print(f"{len(dataset.samples)} shots over {len(dataset.times)} times and {len(dataset.bases)} bases")

    cfg = OptimizerConfig(AdamConfig(max_epochs=40))
    runs = multi_start(dataset, model, inits=3, init_seed=0, cfg=cfg,
                       progress=lambda r, res: print(f"  start {r}: loss {res.final_loss:.5f}"))
    best = runs[0]
    print("best fit:", np.round(best.theta_hat, 3))
    print(f"relative error {relative_error(best.theta_hat, theta_star):.3f}")


if __name__ == "__main__":
    main()
