"""
Filling in a sparsely sampled donut
===================================

Only 100 training points are drawn from the annulus 1 <= r <= 2. The cover
rate counts the 0.1 x 0.1 cells inside the annulus that receive at least one
generated sample; data sparsity is the same number for the training points.
With a fast learning rate the plain GAN drifts back onto the training points
as training goes on, so watch how cover changes with the iteration count.
Usage::

    python3 03_donut_cover.py [iterations] [seed]
"""

import sys

import numpy as np

from ndiv import plot
from ndiv.trainer import ExperimentConfig, evaluate, generate, init_state, train_step

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 4000
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

for variant in ("gan_only", "ndiv"):
    cfg = ExperimentConfig(target="donut", variant=variant, lam=5000.0, lr=1e-3,
                           max_iters=iters, eval_samples=5000)
    st = init_state(cfg, seed)
    while st.iteration < iters:
        train_step(st)
    rep = evaluate(st)
    print(f"{variant:9s} cover {rep.cover_rate:5.1f}%  outliers {rep.outlier_rate:5.1f}%  "
          f"(training points alone cover {rep.data_sparsity:.1f}%)")
    pts = generate(st, 2000, np.random.default_rng(seed))
    with open(f"donut_{variant}.svg", "w", encoding="utf-8") as f:
        f.write(plot.scatter_svg(pts, donut=cfg.donut()))
