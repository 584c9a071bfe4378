"""Adversarial checking losses, the visible-joint loss, and ablation losses."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ndiv import autodiff as ad
from ndiv.loss import NormalizedDistanceMatrix, off_diagonal

# A discriminator is any callable mapping an (N, dim) node to (N, 1) logits.
Critic = Callable[[ad.Node], ad.Node]


def discriminator_loss(D: Critic, real, fake) -> ad.Node:
    """``-mean log s(D(real)) - mean log(1 - s(D(fake)))``.

    Both batches enter as constants, so this loss never reaches the generator.
    """
    real = ad._node(real).value
    fake = ad._node(fake).value
    if real.shape != fake.shape:
        raise ad.ShapeError("discriminator_loss", real.shape, fake.shape)
    n = real.shape[0]
    # one pass over both halves; log(1 - s(x)) = log s(-x)
    logits = D(ad.constant(np.concatenate([real, fake], axis=0)))
    sign = np.concatenate([np.ones((n, 1)), -np.ones((n, 1))], axis=0)
    return ad.scale(ad.mean(ad.log_sigmoid(ad.mask_mul(logits, sign))), -2.0)


def generator_adv_loss(D: Critic, fake) -> ad.Node:
    """Non-saturating generator loss ``-mean log s(D(fake))``."""
    return ad.scale(ad.mean(ad.log_sigmoid(D(ad._node(fake)))), -1.0)


def f_vis_loss(y, y_ref, V) -> ad.Node:
    """Squared error on visible coordinates, summed per sample, mean over the batch."""
    y = ad._node(y)
    y_ref = np.asarray(y_ref, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if y.shape != y_ref.shape:
        raise ad.ShapeError("f_vis_loss", y.shape, y_ref.shape)
    if V.shape[-1] != y.shape[-1]:
        raise ad.ShapeError("f_vis_loss", y.shape, V.shape)
    err = ad.mask_mul(ad.sub(y, y_ref), V)
    per_sample = ad.sum(ad.square(err), axis=-1)
    return ad.mean(per_sample)


def unnorm_loss(raw_z, raw_y, alpha: float = 0.5) -> ad.Node:
    """Hinge on raw (unnormalized) distances; not scale invariant."""
    rz, ry = ad._node(raw_z), ad._node(raw_y)
    if rz.shape != ry.shape:
        raise ad.ShapeError("unnorm_loss", rz.shape, ry.shape)
    n = rz.shape[-1]
    h = ad.mask_mul(ad.maximum0(ad.sub(ad.scale(rz, alpha), ry)), off_diagonal(n))
    return ad.scale(ad.sum(h), n / (rz.value.size * (n - 1)))


def nomax_loss(Dz, Dy, alpha: float = 0.5) -> ad.Node:
    """Normalized loss without the hinge; pairs can contribute negatively."""
    dz = Dz.D if isinstance(Dz, NormalizedDistanceMatrix) else ad._node(Dz)
    dy = Dy.D if isinstance(Dy, NormalizedDistanceMatrix) else ad._node(Dy)
    if dz.shape != dy.shape:
        raise ad.ShapeError("nomax_loss", dz.shape, dy.shape)
    n = dz.shape[-1]
    h = ad.mask_mul(ad.sub(ad.scale(dz, alpha), dy), off_diagonal(n))
    return ad.scale(ad.sum(h), n / (dz.value.size * (n - 1)))


def ablation_losses(Dz: NormalizedDistanceMatrix, Dy: NormalizedDistanceMatrix,
                    alpha: float = 0.5) -> dict:
    """Both ablations from matched normalized matrices: ``{"unnorm", "nomax"}``."""
    return {"unnorm": unnorm_loss(Dz.raw, Dy.raw, alpha), "nomax": nomax_loss(Dz, Dy, alpha)}
