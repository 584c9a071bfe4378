"""
Diversity on occluded joints
============================

A two-joint toy pose: the first joint is visible and given as input, the
second is hidden and can sit at either of two positions. The training data
stores only one of them per input. Gating the output distance with the
visibility mask asks for diversity on the hidden joint only.
"""

import sys

import numpy as np

from ndiv import synthdata as sd
from ndiv.trainer import ExperimentConfig, evaluate, init_state, sample_poses, train_step

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 3000

runs = {
    # encoder + generator with a 10-d latent code and the gated diversity term
    "diverse": ExperimentConfig(target="toy_pose", latent_dim=10, alpha=0.8, lam=20.0, max_iters=iters),
    # no latent code at all: a deterministic regressor
    "baseline": ExperimentConfig(target="toy_pose", latent_dim=0, variant="gan_only", max_iters=iters),
}
states = {}
for name, cfg in runs.items():
    st = states[name] = init_state(cfg, 0)
    while st.iteration < iters:
        train_step(st)
    rep = evaluate(st)
    print(f"{name:9s} visible error {rep.visible_error:.4f}  hidden-joint spread {rep.sample_std:.3f}")

# the two valid hidden positions for one input, next to a few samples
x = np.array([[0.2, -0.3]])
print("valid:", sd.toy_pose_modes(x)[0].round(3).tolist())
rng = np.random.default_rng(1)
print("sampled:", [sample_poses(states["diverse"], x, rng)[0, 2:].round(3).tolist() for _ in range(4)])
