import numpy as np
import pytest

from ndiv import adversarial as adv
from ndiv import autodiff as ad
from ndiv import loss as L
from ndiv.nn import MlpSpec, as_leaves, forward_mlp, init_params


def const_critic(logit):
    return lambda x: ad.add(ad.scale(ad.sum(x, axis=1, keepdims=True), 0.0), logit)


def test_disc_loss_at_zero_logits():
    real, fake = np.ones((4, 2)), np.zeros((4, 2))
    assert float(adv.discriminator_loss(const_critic(0.0), real, fake).value) == pytest.approx(2 * np.log(2))


def test_disc_loss_saturated():
    D = lambda x: ad.scale(ad.sub(ad.sum(x, axis=1, keepdims=True), 1.0), 20.0)  # noqa: E731
    real, fake = np.ones((4, 2)), np.zeros((4, 2))
    assert float(adv.discriminator_loss(D, real, fake).value) < 1e-8


def test_disc_loss_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        adv.discriminator_loss(const_critic(0.0), np.ones((4, 2)), np.ones((3, 2)))


def test_disc_loss_gradcheck():
    spec = MlpSpec((2, 5, 1), hidden="tanh")
    p = init_params(spec, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    real, fake = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    for name in p:
        def f(v, name=name):
            leaves = as_leaves(p, trainable=False)
            leaves[name] = v
            return adv.discriminator_loss(lambda x: forward_mlp(spec, leaves, x), real, fake)
        assert ad.finite_diff_check(f, p[name], 1e-5) < 1e-4


def test_generator_loss_values():
    fake = np.zeros((5, 2))
    assert float(adv.generator_adv_loss(const_critic(0.0), fake).value) == pytest.approx(np.log(2))
    assert float(adv.generator_adv_loss(const_critic(20.0), fake).value) < 1e-8


def test_generator_loss_decreases_against_frozen_critic():
    dspec = MlpSpec((2, 1))
    dparams = {"W0": np.array([[1.0], [1.0]]), "b0": np.array([0.0])}
    critic = lambda x: forward_mlp(dspec, as_leaves(dparams, False), x)  # noqa: E731
    fake = np.random.default_rng(2).normal(size=(8, 2)) - 2.0
    losses = []
    for _ in range(100):
        v = ad.variable(fake)
        loss = adv.generator_adv_loss(critic, v)
        ad.backward(loss)
        losses.append(float(loss.value))
        fake = fake - 0.1 * v.grad
    assert losses[-1] < losses[0] and all(b <= a for a, b in zip(losses, losses[1:]))


def test_isolation_of_updates():
    g_spec, d_spec = MlpSpec((2, 4, 2)), MlpSpec((2, 4, 1))
    g = as_leaves(init_params(g_spec, np.random.default_rng(3)))
    d = as_leaves(init_params(d_spec, np.random.default_rng(4)))
    fake = forward_mlp(g_spec, g, np.random.default_rng(5).random((6, 2)))
    ad.backward(adv.discriminator_loss(lambda x: forward_mlp(d_spec, d, x), np.ones((6, 2)), fake))
    assert all(not n.grad.any() for n in g.values())
    assert any(n.grad.any() for n in d.values())
    d_frozen = as_leaves({k: n.value for k, n in d.items()}, trainable=False)
    ad.backward(adv.generator_adv_loss(lambda x: forward_mlp(d_spec, d_frozen, x), fake))
    assert all(not n.grad.any() for n in d_frozen.values())
    assert any(n.grad.any() for n in g.values())


def test_f_vis_examples():
    y = np.array([[1.0, 5.0, 2.0, 7.0]])
    zero = np.zeros((1, 4))
    assert float(adv.f_vis_loss(y, zero, [0, 0, 0, 0]).value) == 0.0
    assert float(adv.f_vis_loss(y, y, [1, 1, 1, 1]).value) == 0.0
    assert float(adv.f_vis_loss(y, zero, [1, 0, 1, 0]).value) == pytest.approx(5.0)


def test_f_vis_shape_errors():
    with pytest.raises(ad.ShapeError):
        adv.f_vis_loss(np.ones((2, 4)), np.ones((2, 3)), np.ones(4))
    with pytest.raises(ad.ShapeError):
        adv.f_vis_loss(np.ones((2, 4)), np.ones((2, 4)), np.ones(3))


def test_f_vis_occlusion_invariance():
    rng = np.random.default_rng(6)
    V = np.array([1.0, 0.0, 1.0, 0.0])
    y, ref = rng.normal(size=(7, 4)), rng.normal(size=(7, 4))
    y2 = y + (1 - V) * rng.normal(size=(7, 4)) * 1e3
    assert float(adv.f_vis_loss(y, ref, V).value) == float(adv.f_vis_loss(y2, ref, V).value)


def test_unnorm_changes_with_scale_ndiv_does_not():
    rng = np.random.default_rng(7)
    z, y = rng.random((8, 2)), 0.1 * rng.normal(size=(8, 2))
    Dz = L.normdist(z)
    Dy, Dy10 = L.normdist(y), L.normdist(10 * y)
    u = adv.ablation_losses(Dz, Dy)["unnorm"]
    u10 = adv.ablation_losses(Dz, Dy10)["unnorm"]
    assert float(u.value) != float(u10.value)
    assert abs(float(L.ndiv_loss(Dz, Dy).value) - float(L.ndiv_loss(Dz, Dy10).value)) < 1e-9


def test_nomax_can_be_negative():
    z = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    y = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.1]])
    val = float(adv.nomax_loss(L.normdist(z), L.normdist(y), 0.5).value)
    assert val < 0
    assert float(L.ndiv_loss(L.normdist(z), L.normdist(y), 0.5).value) >= 0
