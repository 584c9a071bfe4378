"""
Normalized pairwise distances
=============================

A walk through the distance matrices behind the diversity loss, on three
hand-picked points. Writes ``heatmap.svg`` into the working directory.
"""

import numpy as np

from ndiv import autodiff as ad
from ndiv import loss as L
from ndiv.plot import heatmap_svg

# three latent codes with raw distances 1, 2 and sqrt(5)
z = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
Dz = L.normdist(z)
print("raw distances\n", Dz.raw.value.round(5))

# every row is divided by its own sum, so rows add up to one and the matrix
# is no longer symmetric
print("normalized\n", Dz.D.value.round(5))
print("row sums", Dz.D.value.sum(axis=1))

# scaling the points leaves the normalized matrix alone
print("scaled by 7, max change:", np.abs(L.normdist(7 * z).D.value - Dz.D.value).max())

# outputs where the last two points coincide: the pairs that lost their
# distance now fall short of alpha times the latent distance
y = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
print("loss, alpha=1:", float(L.ndiv_loss(Dz, L.normdist(y), alpha=1.0).value))

# a fully collapsed batch gives alpha / (N - 1)
collapsed = np.zeros((3, 2))
print("collapsed, alpha=0.5:", float(L.ndiv_loss(Dz, L.normdist(collapsed), 0.5).value))

# The row sums enter the graph through stop_gradient. The gradient then only
# pushes individual distances apart and ignores how the normalizer moves.
yv = np.array([[0.0, 0.0], [0.3, 0.0], [0.25, 0.05]])  # two outputs almost merged
frozen = ad.grad(lambda v: L.ndiv_loss(Dz, L.normdist(v, freeze=True)), yv)
full = ad.grad(lambda v: L.ndiv_loss(Dz, L.normdist(v, freeze=False)), yv)
print("frozen gradient\n", frozen.round(4))
print("fully differentiated\n", full.round(4))

with open("heatmap.svg", "w", encoding="utf-8") as f:
    f.write(heatmap_svg(Dz.D.value))
print("wrote heatmap.svg")
