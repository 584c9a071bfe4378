import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ndiv import metrics as M
from ndiv import synthdata as sd


def test_all_at_one_center():
    spec = sd.ring8()
    assert M.mode_stats(np.tile(spec.centers[3], (500, 1)), spec) == (1.0, 0.0)


def test_target_draws_capture_everything():
    spec = sd.ring8()
    modes, fail = M.mode_stats(sd.sample_target(spec, 10_000, np.random.default_rng(0)), spec)
    assert modes == 8 and fail < 1.5


def test_ring_modes_exact_over_twenty_seeds():
    spec = sd.ring8()
    m = [M.mode_stats(sd.sample_target(spec, 10_000, np.random.default_rng(s)), spec)[0] for s in range(20)]
    assert np.mean(m) == 8.0


def test_crafted_grid_set():
    spec = sd.grid25()
    s = np.concatenate([spec.centers, np.full((100, 2), 100.0)])
    modes, fail = M.mode_stats(s, spec)
    assert modes == 25 and fail == pytest.approx(80.0)


def test_mode_stats_rejects_other_targets():
    with pytest.raises(ValueError):
        M.mode_stats(np.zeros((3, 2)), sd.make_target("donut"))
    with pytest.raises(ValueError):
        M.mode_stats(np.zeros((0, 2)), sd.ring8())


def test_threshold_knob():
    spec = sd.ring8()
    s = spec.centers[:1] + np.array([[0.2, 0.0]])  # 4 sigma away
    assert M.mode_stats(s, spec, 3.0) == (0.0, 100.0)
    assert M.mode_stats(s, spec, 5.0) == (1.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.permutations(range(300)))
def test_mode_stats_permutation(seed, perm):
    spec = sd.grid25()
    s = sd.sample_target(spec, 300, np.random.default_rng(seed)) * 1.04
    assert M.mode_stats(s, spec) == M.mode_stats(s[np.array(perm)], spec)


def test_donut_empty_and_trainset():
    d = sd.DonutSpec()
    train = sd.donut_trainset(d, np.random.default_rng(1))
    cover, outlier, sparsity = M.cover_outlier(np.zeros((0, 2)), d, train)
    assert (cover, outlier) == (0.0, 0.0)
    cover, outlier, sparsity = M.cover_outlier(train, d, train)
    assert cover == sparsity and outlier == 0.0
    assert 5 < sparsity < 15


def test_dense_uniform_covers():
    d = sd.DonutSpec()
    assert M.cover_rate(sd.sample_annulus(d, 100_000, np.random.default_rng(2)), d) > 99


def test_cells_region_count():
    lo, n, region = M.donut_cells(sd.DonutSpec())
    assert n == 40 and lo.tolist() == [-2.0, -2.0]
    assert abs(region.sum() * 0.01 - 3 * np.pi) < 0.1


def test_outliers_counted():
    d = sd.DonutSpec()
    pts = np.array([[0.0, 0.0], [1.5, 0.0], [5.0, 5.0], [0.0, -1.5]])
    assert M.cover_outlier(pts, d, pts)[1] == 50.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (60, 2), elements=st.floats(-2.5, 2.5)), st.integers(0, 60))
def test_cover_monotone(pts, k):
    d = sd.DonutSpec()
    assert M.cover_rate(pts[:k], d) <= M.cover_rate(pts, d)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 500))
def test_annulus_subsets_have_no_outliers(seed, n):
    d = sd.DonutSpec()
    s = sd.sample_annulus(d, n, np.random.default_rng(seed))
    assert M.cover_outlier(s, d, s)[1] == 0.0


def _toy_inputs(n=50):
    data = sd.toy_pose_dataset(n, np.random.default_rng(3))
    return data


def test_deterministic_generator_zero_spread():
    data = _toy_inputs()
    vis, std = M.conditional_dispersion(lambda x, r: data.y, data.x, data.y, data.V, 8, np.random.default_rng(0))
    assert vis == 0.0 and std == 0.0


def test_true_bimodal_spread():
    data = _toy_inputs(200)

    def fn(x, r):
        modes = sd.toy_pose_modes(x)
        pick = r.integers(0, 2, size=len(x))
        return np.concatenate([x, modes[np.arange(len(x)), pick]], axis=1)

    vis, std = M.conditional_dispersion(fn, data.x, data.y, data.V, 400, np.random.default_rng(1))
    assert vis == 0.0
    assert std == pytest.approx(np.sqrt(0.5), abs=0.02)


def test_streaming_matches_two_pass():
    data = _toy_inputs(30)
    draws = [np.random.default_rng(k).normal(size=data.y.shape) for k in range(7)]
    it = iter(draws)
    vis, std = M.conditional_dispersion(lambda x, r: next(it), data.x, data.y, data.V, 7, None)
    stack = np.stack(draws)
    ref_std = np.sqrt(stack[:, :, 2:].var(axis=0).sum(-1)).mean()
    ref_vis = np.linalg.norm(stack[:, :, :2] - data.y[None, :, :2], axis=-1).mean()
    assert abs(std - ref_std) < 1e-12 and abs(vis - ref_vis) < 1e-12


def test_dispersion_needs_two_draws():
    data = _toy_inputs(3)
    with pytest.raises(ValueError):
        M.conditional_dispersion(lambda x, r: data.y, data.x, data.y, data.V, 1, None)


def test_report_serialization():
    r = M.MetricsReport(modes=8.0, fail_rate=3.5, seeds=[0, 1])
    assert json.loads(r.to_json()) == {"modes": 8.0, "fail_rate": 3.5, "seeds": [0, 1]}
    m = M.MetricsReport.mean_of([r, M.MetricsReport(modes=6.0, fail_rate=1.5)], [0, 1])
    assert m.modes == 7.0 and m.fail_rate == 2.5 and m.cover_rate is None


def test_table_csv():
    text = M.table1_csv({"ndiv": {"ring_modes": 8.0, "ring_fail": 10.25}, "gan": {"ring_modes": 1.0}})
    lines = text.splitlines()
    assert lines[0] == "method,ring_modes,ring_fail,grid_modes,grid_fail"
    assert lines[1] == "ndiv,8.0,10.2,,"
