"""
Mode collapse on the eight-Gaussian ring
========================================

Trains a plain GAN and the same GAN with the diversity term side by side and
counts captured modes along the way. Usage::

    python3 02_ring_mode_collapse.py [iterations] [seed]

A few thousand iterations already show the gap; the acceptance runs use
50000. Writes ``ring_gan.svg`` and ``ring_ndiv.svg``.
"""

import sys

import numpy as np

from ndiv import plot
from ndiv.trainer import ExperimentConfig, evaluate, generate, init_state, train_step

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 4000
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

# same networks, optimizer and data; only the variant differs
configs = {
    "gan": ExperimentConfig(target="ring8", variant="gan_only", max_iters=iters),
    "ndiv": ExperimentConfig(target="ring8", variant="ndiv", lam=5000.0, max_iters=iters),
}
states = {k: init_state(c, seed) for k, c in configs.items()}

step = max(iters // 5, 1)
for it in range(step, iters + 1, step):
    line = [f"iter {it:6d}"]
    for name, st in states.items():
        while st.iteration < it:
            train_step(st)
        rep = evaluate(st)
        line.append(f"{name}: {rep.modes:.0f} modes, {rep.fail_rate:5.1f}% fail")
    print("  ".join(line), flush=True)

# the scatter plots make the difference obvious at a glance
for name, st in states.items():
    pts = generate(st, 2000, np.random.default_rng(seed))
    with open(f"ring_{name}.svg", "w", encoding="utf-8") as f:
        f.write(plot.scatter_svg(pts, centers=st.data["target"].centers))
print("wrote ring_gan.svg, ring_ndiv.svg")
