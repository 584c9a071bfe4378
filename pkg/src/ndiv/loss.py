"""Normalized pairwise distances and the normalized diversity loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ndiv import autodiff as ad

EPS = ad.EPS


@dataclass
class MetricTransform:
    """Map applied to points before taking Euclidean distances.

    ``kind`` is ``"identity"``, ``"gate"`` (keep coordinates where ``1 - mask``
    is one, i.e. the occluded ones) or ``"embed"`` (``network`` maps a node of
    points to a node of features).
    """

    kind: str = "identity"
    mask: Optional[np.ndarray] = None
    network: Optional[Callable] = None

    def __post_init__(self):
        if self.kind == "gate":
            m = np.asarray(self.mask, dtype=np.float64)
            if not np.all((m == 0) | (m == 1)):
                raise ValueError("gate mask entries must be 0 or 1")
            self.mask = m
        elif self.kind == "embed":
            if self.network is None:
                raise ValueError("embed transform needs a network")
        elif self.kind != "identity":
            raise ValueError(f"unknown metric transform {self.kind!r}")

    def __call__(self, points: ad.Node) -> ad.Node:
        if self.kind == "gate":
            return ad.mask_mul(points, 1.0 - self.mask)
        if self.kind == "embed":
            return self.network(points)
        return points


IDENTITY = MetricTransform()


def gate(mask) -> MetricTransform:
    return MetricTransform("gate", mask=mask)


def pairwise_distance(points, h: MetricTransform = IDENTITY) -> ad.Node:
    """N x N matrix of ``||h(q_i) - h(q_j)||`` with the safe square root.

    Leading axes before the last two are independent groups: an input of
    shape ``(G, N, k)`` gives ``(G, N, N)``.
    """
    q = h(points if isinstance(points, ad.Node) else ad.constant(points))
    if q.value.ndim < 2 or q.shape[-2] < 2:
        raise ValueError(f"pairwise_distance needs a batch of >= 2 vectors, got shape {q.shape}")
    return ad.safe_sqrt(ad.pairwise_sqdist(q))


@dataclass
class NormalizedDistanceMatrix:
    D: ad.Node
    raw: ad.Node
    normalizers: np.ndarray
    collapsed: np.ndarray

    @property
    def n(self) -> int:
        return self.D.shape[-1]


def off_diagonal(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)


def normdist(points, h: MetricTransform = IDENTITY, freeze: bool = True,
             normalizers: Optional[np.ndarray] = None) -> NormalizedDistanceMatrix:
    """Row-normalized pairwise distances.

    Each row is divided by its sum of off-diagonal distances. With ``freeze``
    the row sums enter through :func:`ad.stop_gradient`, so gradients reach
    the points only through the numerators. ``normalizers`` substitutes
    literal row sums (used to build the frozen surrogate in tests).

    A row whose off-diagonal squared distances sum to at most ``EPS`` is
    treated as collapsed and zeroed.
    """
    raw = pairwise_distance(points, h)
    n = raw.shape[-1]
    off = off_diagonal(n)
    raw_off = ad.mask_mul(raw, off)
    sq = np.maximum(raw.value ** 2 - EPS, 0.0) * off
    collapsed = sq.sum(axis=-1) <= EPS

    S = ad.sum(raw_off, axis=-1, keepdims=True)
    if normalizers is not None:
        S = ad.constant(np.reshape(normalizers, S.shape))
    elif freeze:
        S = ad.stop_gradient(S)
    D = ad.div(raw_off, S, eps=EPS)
    if collapsed.any():
        D = ad.mask_mul(D, (~collapsed).astype(np.float64)[..., None])
    return NormalizedDistanceMatrix(D, raw, S.value[..., 0].copy(), collapsed)


def _as_node(d) -> ad.Node:
    return d.D if isinstance(d, NormalizedDistanceMatrix) else ad._node(d)


def ndiv_loss(Dz, Dy, alpha: float = 0.5) -> ad.Node:
    """Mean over ordered pairs i != j of ``max(alpha * Dz_ij - Dy_ij, 0)``.

    Batched ``(G, N, N)`` inputs are averaged over groups as well.
    """
    dz, dy = _as_node(Dz), _as_node(Dy)
    if dz.shape != dy.shape:
        raise ad.ShapeError("ndiv_loss", dz.shape, dy.shape)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n = dz.shape[-1]
    groups = dz.value.size // (n * n)
    hinge = ad.maximum0(ad.sub(ad.scale(dz, alpha), dy))
    hinge = ad.mask_mul(hinge, off_diagonal(n))
    return ad.scale(ad.sum(hinge), 1.0 / (groups * (n * n - n)))


def total_loss(gen_loss, ndiv, lam: float = 1.0) -> ad.Node:
    if lam == 0:
        return ad._node(gen_loss)
    return ad.add(gen_loss, ad.scale(ndiv, lam))
