"""Property suite run by ``ndiv verify``.

Each check returns ``(passed, detail)``. Checks use fixed seeds so the suite
is deterministic.
"""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from ndiv import adversarial as adv
from ndiv import autodiff as ad
from ndiv import loss as L
from ndiv import metrics as M
from ndiv import synthdata as sd
from ndiv.nn import MlpSpec, as_leaves, forward_mlp, init_params

GRAD_TOL = 1e-4
EXACT_TOL = 1e-9

CHECKS: dict = {}


def check(pid: str):
    def deco(fn: Callable):
        CHECKS[pid] = fn
        return fn
    return deco


def _rng(k: int = 0) -> np.random.Generator:
    return np.random.default_rng([2024, k])


# -- autodiff ----------------------------------------------------------------

def _op_cases(rng):
    """(name, scalar function of one node, point) for every differentiable op."""
    w = rng.normal(size=(3, 4))
    a = rng.normal(size=(3, 4))
    m = rng.normal(size=(4, 2))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    away = a + np.sign(a) * 0.1  # keep relu/max0 kinks out of the stencil
    mask = (rng.random((3, 4)) > 0.5).astype(float)
    lin = lambda n: ad.sum(ad.mul(n, w))  # noqa: E731
    return [
        ("add", lambda x: lin(ad.add(x, a)), rng.normal(size=(3, 4))),
        ("sub", lambda x: lin(ad.sub(a, x)), rng.normal(size=(3, 4))),
        ("mul", lambda x: lin(ad.mul(x, x)), rng.normal(size=(3, 4))),
        ("scale", lambda x: lin(ad.scale(x, -2.5)), rng.normal(size=(3, 4))),
        ("matmul", lambda x: ad.sum(ad.square(ad.matmul(x, m))), rng.normal(size=(3, 4))),
        ("affine", lambda x: ad.sum(ad.square(ad.affine(x, m, m[0]))), rng.normal(size=(3, 4))),
        ("relu", lambda x: lin(ad.relu(x)), away),
        ("max0", lambda x: lin(ad.maximum0(x)), away),
        ("tanh", lambda x: lin(ad.tanh(x)), rng.normal(size=(3, 4))),
        ("sum", lambda x: ad.sum(ad.square(ad.sum(x, axis=1))), rng.normal(size=(3, 4))),
        ("mean", lambda x: ad.sum(ad.square(ad.mean(x, axis=0))), rng.normal(size=(3, 4))),
        ("square", lambda x: lin(ad.square(x)), rng.normal(size=(3, 4))),
        ("safe_sqrt", lambda x: lin(ad.safe_sqrt(x)), pos),
        ("div", lambda x: lin(ad.div(a, x)), pos),
        ("concat", lambda x: ad.sum(ad.square(ad.concat([x, ad.scale(x, 3.0)]))), rng.normal(size=(3, 4))),
        ("log_sigmoid", lambda x: lin(ad.log_sigmoid(x)), 3 * rng.normal(size=(3, 4))),
        ("mask_mul", lambda x: lin(ad.mask_mul(x, mask)), rng.normal(size=(3, 4))),
        ("pairwise_sqdist", lambda x: ad.sum(ad.safe_sqrt(ad.pairwise_sqdist(x))),
         rng.normal(size=(5, 3))),
    ]


@check("autodiff.gradcheck")
def autodiff_gradcheck(points: int = 100):
    worst, where = 0.0, ""
    for k in range(points):
        for name, f, x in _op_cases(_rng(k)):
            err = ad.finite_diff_check(f, x, 1e-5)
            if err > worst:
                worst, where = err, name
    return worst < GRAD_TOL, f"max rel err {worst:.2e} ({where})"


@check("autodiff.stop_gradient_forward")
def stop_gradient_forward():
    x = _rng(1).normal(size=(6, 2))
    a = L.normdist(x, freeze=True).D.value
    b = L.normdist(x, freeze=False).D.value
    return bool(np.array_equal(a, b)), "frozen and unfrozen forward values bit-identical"


@check("autodiff.determinism")
def backward_determinism():
    def run():
        x = ad.variable(_rng(2).normal(size=(8, 2)))
        loss = L.ndiv_loss(L.normdist(_rng(3).random((8, 2))), L.normdist(x))
        ad.backward(loss)
        return x.grad
    return bool(np.array_equal(run(), run())), "two backward passes bit-identical"


# -- nn ----------------------------------------------------------------------

@check("nn.determinism")
def nn_determinism():
    spec = MlpSpec((2, 16, 16, 2))
    a = init_params(spec, _rng(4))
    b = init_params(spec, _rng(4))
    return all(np.array_equal(a[k], b[k]) for k in a), "same seed, same parameters"


@check("nn.permutation_equivariance")
def nn_permutation():
    spec = MlpSpec((2, 16, 16, 2))
    p = as_leaves(init_params(spec, _rng(5)), trainable=False)
    x = _rng(6).normal(size=(10, 2))
    perm = _rng(7).permutation(10)
    y = forward_mlp(spec, p, x).value
    yp = forward_mlp(spec, p, x[perm]).value
    err = float(np.abs(y[perm] - yp).max())
    return err < EXACT_TOL, f"max diff {err:.1e}"


# -- normalized diversity ----------------------------------------------------

@check("ndiv.scale_invariance")
def ndiv_scale_invariance():
    worst = 0.0
    for k in range(10):
        rng = _rng(10 + k)
        x = rng.normal(size=(7, 3))
        c = float(rng.uniform(0.1, 10.0))
        worst = max(worst, float(np.abs(L.normdist(c * x).D.value - L.normdist(x).D.value).max()))
    return worst < EXACT_TOL, f"max diff {worst:.1e}"


@check("ndiv.row_stochastic")
def ndiv_rows():
    worst = 0.0
    for k in range(10):
        D = L.normdist(_rng(20 + k).normal(size=(9, 2))).D.value
        worst = max(worst, float(np.abs(D.sum(axis=1) - 1).max()))
    return worst < EXACT_TOL, f"max |row sum - 1| {worst:.1e}"


@check("ndiv.permutation")
def ndiv_permutation():
    rng = _rng(30)
    z, y = rng.random((8, 2)), rng.normal(size=(8, 2))
    perm = rng.permutation(8)
    Dz = L.normdist(z).D.value
    Dzp = L.normdist(z[perm]).D.value
    e1 = float(np.abs(Dz[np.ix_(perm, perm)] - Dzp).max())
    l1 = float(L.ndiv_loss(L.normdist(z), L.normdist(y)).value)
    l2 = float(L.ndiv_loss(L.normdist(z[perm]), L.normdist(y[perm])).value)
    err = max(e1, abs(l1 - l2))
    return err < EXACT_TOL, f"max diff {err:.1e}"


@check("ndiv.nonneg_zero")
def ndiv_nonneg():
    ok = True
    for k in range(20):
        rng = _rng(40 + k)
        z, y = rng.random((6, 2)), rng.normal(size=(6, 2))
        alpha = float(rng.uniform(0.1, 1.5))
        Dz, Dy = L.normdist(z), L.normdist(y)
        val = float(L.ndiv_loss(Dz, Dy, alpha).value)
        off = ~np.eye(6, dtype=bool)
        satisfied = bool(np.all(Dy.D.value[off] >= alpha * Dz.D.value[off]))
        ok &= val >= 0 and ((val == 0) == satisfied)
        # y = c z meets every pair when alpha < 1 (alpha = 1 would hinge on rounding)
        ok &= float(L.ndiv_loss(Dz, L.normdist(3.0 * z), min(alpha, 0.999)).value) == 0.0
    return ok, "L >= 0 and L == 0 iff every pair satisfied"


@check("ndiv.collapsed_closed_form")
def ndiv_collapsed():
    worst = 0.0
    for n in (3, 5, 16):
        z = _rng(60 + n).random((n, 2))
        y = np.tile([[0.3, -1.2]], (n, 1))
        val = float(L.ndiv_loss(L.normdist(z), L.normdist(y), 0.5).value)
        worst = max(worst, abs(val - 0.5 / (n - 1)))
    return worst < EXACT_TOL, f"max |L - alpha/(N-1)| {worst:.1e}"


def frozen_gradient_gap(seed: int = 70, n: int = 6) -> tuple:
    """``(error vs frozen surrogate, gap to unfrozen gradient)`` for dL/dy."""
    rng = _rng(seed)
    z, y = rng.random((n, 2)), rng.normal(size=(n, 2))
    Dz = L.normdist(z)
    S = L.normdist(y).normalizers
    f = lambda v: L.ndiv_loss(Dz, L.normdist(v, freeze=True), 0.5)  # noqa: E731
    surrogate = lambda p: float(L.ndiv_loss(Dz, L.normdist(p, normalizers=S), 0.5).value)  # noqa: E731
    err = ad.finite_diff_check(f, y, 1e-6, reference=surrogate)
    g_frozen = ad.grad(f, y)
    g_full = ad.grad(lambda v: L.ndiv_loss(Dz, L.normdist(v, freeze=False), 0.5), y)
    return err, float(np.abs(g_frozen - g_full).max())


@check("ndiv.freeze_semantics")
def ndiv_freeze():
    err, gap = frozen_gradient_gap()
    return err < GRAD_TOL and gap > 1e-6, f"surrogate err {err:.1e}, gap to unfrozen {gap:.1e}"


@check("ndiv.gradcheck")
def ndiv_gradcheck():
    rng = _rng(80)
    z, y = rng.random((6, 2)), rng.normal(size=(6, 2))
    Dz = L.normdist(z)
    err = ad.finite_diff_check(lambda v: L.ndiv_loss(Dz, L.normdist(v, freeze=False), 0.5), y, 1e-6)
    return err < GRAD_TOL, f"max rel err {err:.1e}"


@check("ndiv.collapse_bound")
def ndiv_collapse_bound():
    """L <= alpha/(N-1), reached by a fully collapsed batch."""
    worst = -np.inf
    for k in range(50):
        rng = _rng(90 + k)
        z, y = rng.random((5, 2)), rng.normal(size=(5, 2)) * rng.uniform(0.01, 10)
        alpha = float(rng.uniform(0.1, 2.0))
        worst = max(worst, float(L.ndiv_loss(L.normdist(z), L.normdist(y), alpha).value) - alpha / 4)
    return worst <= 1e-12, f"max L - alpha/(N-1) {worst:.2e}"


def merged_pair_terms(z, y, i, j, alpha=0.5):
    """Hinge terms of pairs (i, j) and (j, i) before and after moving y_i onto y_j."""
    def terms(yy):
        v = np.maximum(alpha * L.normdist(z).D.value - L.normdist(yy).D.value, 0.0)
        return v[i, j] + v[j, i]
    ym = y.copy()
    ym[i] = y[j]
    return terms(y), terms(ym)


@check("ndiv.collapse_pair_monotone")
def ndiv_pair_monotone():
    worst = np.inf
    for k in range(20):
        rng = _rng(140 + k)
        z, y = rng.random((5, 2)), rng.normal(size=(5, 2))
        for i in range(5):
            for j in range(5):
                if i != j:
                    before, after = merged_pair_terms(z, y, i, j)
                    worst = min(worst, after - before)
    return worst >= 0.0, f"min change of merged-pair terms {worst:.2e}"


# -- adversarial -------------------------------------------------------------

def _tiny_nets():
    g_spec, d_spec = MlpSpec((2, 8, 2)), MlpSpec((2, 8, 1))
    return g_spec, init_params(g_spec, _rng(100)), d_spec, init_params(d_spec, _rng(101))


@check("adversarial.disc_isolation")
def disc_isolation():
    g_spec, g, d_spec, d = _tiny_nets()
    gl = as_leaves(g)
    dl = as_leaves(d)
    fake = forward_mlp(g_spec, gl, _rng(102).random((6, 2)))
    loss = adv.discriminator_loss(lambda x: forward_mlp(d_spec, dl, x), _rng(103).normal(size=(6, 2)), fake)
    ad.backward(loss)
    zero = all(not n.grad.any() for n in gl.values())
    moved = any(n.grad.any() for n in dl.values())
    return zero and moved, "discriminator loss gives zero generator gradient"


@check("adversarial.gen_isolation")
def gen_isolation():
    g_spec, g, d_spec, d = _tiny_nets()
    gl = as_leaves(g)
    dl = as_leaves(d, trainable=False)
    fake = forward_mlp(g_spec, gl, _rng(104).random((6, 2)))
    ad.backward(adv.generator_adv_loss(lambda x: forward_mlp(d_spec, dl, x), fake))
    zero = all(not n.grad.any() for n in dl.values())
    moved = any(n.grad.any() for n in gl.values())
    return zero and moved, "generator step gives zero discriminator gradient"


@check("adversarial.fvis_occlusion")
def fvis_occlusion():
    rng = _rng(105)
    V = np.array([1.0, 1.0, 0.0, 0.0])
    y, yr = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    y2 = y + (1 - V) * rng.normal(size=(5, 4)) * 100
    a = float(adv.f_vis_loss(y, yr, V).value)
    b = float(adv.f_vis_loss(y2, yr, V).value)
    return a == b, "occluded coordinates do not change F_vis"


@check("adversarial.unnorm_scale")
def unnorm_scale():
    rng = _rng(106)
    z, y = rng.random((8, 2)), rng.normal(size=(8, 2))
    Dz = L.normdist(z)
    u1 = float(adv.unnorm_loss(Dz.raw, L.pairwise_distance(y)).value)
    u10 = float(adv.unnorm_loss(Dz.raw, L.pairwise_distance(10 * y)).value)
    n1 = float(L.ndiv_loss(Dz, L.normdist(y)).value)
    n10 = float(L.ndiv_loss(Dz, L.normdist(10 * y)).value)
    ok = u1 != u10 and abs(n1 - n10) < EXACT_TOL
    return ok, f"unnorm {u1:.4g} -> {u10:.4g}; ndiv {n1:.6g} -> {n10:.6g}"


# -- data and metrics --------------------------------------------------------

@check("synthdata.replay")
def data_replay():
    ok = True
    for spec in (sd.ring8(), sd.grid25()):
        ok &= np.array_equal(sd.sample_target(spec, 50, _rng(110)), sd.sample_target(spec, 50, _rng(110)))
    ok &= np.array_equal(sd.donut_trainset(sd.DonutSpec(), _rng(111)), sd.donut_trainset(sd.DonutSpec(), _rng(111)))
    a, b = sd.toy_pose_dataset(20, _rng(112)), sd.toy_pose_dataset(20, _rng(112))
    ok &= np.array_equal(a.y, b.y)
    return bool(ok), "samplers replay bit-identically"


@check("synthdata.six_sigma")
def data_six_sigma():
    worst = 0.0
    for spec in (sd.ring8(), sd.grid25()):
        s = sd.sample_target(spec, 20000, _rng(113))
        d = np.sqrt(((s[:, None] - spec.centers[None]) ** 2).sum(-1)).min(1) / spec.std
        worst = max(worst, float(d.max()))
    return worst < 6.0, f"max distance {worst:.2f} sigma"


@check("metrics.ring_target_modes")
def metrics_ring_modes():
    spec = sd.ring8()
    modes = [M.mode_stats(sd.sample_target(spec, 10000, _rng(200 + k)), spec)[0] for k in range(20)]
    return float(np.mean(modes)) == 8.0, f"mean modes {np.mean(modes)}"


@check("metrics.permutation")
def metrics_permutation():
    spec = sd.grid25()
    s = sd.sample_target(spec, 2000, _rng(120)) * 1.05
    return M.mode_stats(s, spec) == M.mode_stats(s[_rng(121).permutation(2000)], spec), "order-free"


@check("metrics.cover_monotone")
def metrics_cover_monotone():
    donut = sd.DonutSpec()
    s = sd.sample_annulus(donut, 3000, _rng(122))
    rates = [M.cover_rate(s[:k], donut) for k in range(0, 3001, 250)]
    return all(b >= a for a, b in zip(rates, rates[1:])), f"{rates[0]:.1f} -> {rates[-1]:.1f}"


@check("metrics.outlier_subset")
def metrics_outlier_subset():
    donut = sd.DonutSpec()
    s = sd.sample_annulus(donut, 2000, _rng(123))
    return M.cover_outlier(s, donut, s[:10])[1] == 0.0, "annulus samples have no outliers"


# -- trainer -----------------------------------------------------------------

def _short_config(**kw):
    from ndiv.trainer import ExperimentConfig
    base = dict(target="ring8", batch_size=16, hidden=16, max_iters=3, eval_interval=3,
                eval_samples=500, seeds=(0,), ndiv_repeat=1)
    base.update(kw)
    return ExperimentConfig(**base)


@check("trainer.determinism")
def trainer_determinism():
    from ndiv.trainer import run_experiment
    cfg = _short_config()
    return run_experiment(cfg).jsonl() == run_experiment(cfg).jsonl(), "same config, same JSONL"


@check("trainer.isolation")
def trainer_isolation():
    from ndiv.trainer import _disc_update, init_state, predict, sd as _sd
    st = init_state(_short_config(), 0)
    g0 = {k: v.copy() for k, v in st.nets["gen"].params.items()}
    z = _sd.sample_latent(2, 16, st.rng)
    _disc_update(st, _sd.sample_target(_sd.ring8(), 16, st.rng),
                 predict(st.nets["gen"].spec, st.nets["gen"].params, z))
    ok = all(np.array_equal(g0[k], st.nets["gen"].params[k]) for k in g0)
    return ok, "discriminator update leaves generator parameters unchanged"


def run_all(only=None) -> list:
    """Run every check; returns ``[(id, passed, detail, seconds)]``."""
    results = []
    for pid, fn in CHECKS.items():
        if only and not any(pid.startswith(o) for o in only):
            continue
        t = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as e:  # a crashing check is a failing check
            ok, detail = False, f"{type(e).__name__}: {e}"
        results.append((pid, bool(ok), detail, time.perf_counter() - t))
    return results
