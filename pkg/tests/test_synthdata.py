import numpy as np
import pytest
from scipy import stats

from ndiv import synthdata as sd


def rng(k=0):
    return np.random.default_rng(k)


def test_ring_geometry_in_the_limit():
    spec = sd.TargetSpec("ring8", sd.ring8().centers, 1e-300)
    s = sd.sample_target(spec, 200, rng())
    np.testing.assert_allclose(np.hypot(s[:, 0], s[:, 1]), 2.0, atol=1e-12)
    ang = np.mod(np.degrees(np.arctan2(s[:, 1], s[:, 0])), 45.0)
    assert np.all((ang < 1e-9) | (ang > 45 - 1e-9))


def test_grid_centers_and_mean():
    spec = sd.grid25()
    assert sorted(set(spec.centers[:, 0])) == [-4, -2, 0, 2, 4]
    assert np.all(np.abs(sd.sample_target(spec, 100_000, rng(1)).mean(0)) < 0.05)


def test_ring_mode_balance():
    spec = sd.ring8()
    s = sd.sample_target(spec, 10_000, rng(2))
    counts = np.bincount(((s[:, None] - spec.centers[None]) ** 2).sum(-1).argmin(1), minlength=8)
    assert np.all(np.abs(counts - 1250) <= 150)


def test_sample_target_errors():
    with pytest.raises(ValueError):
        sd.sample_target(sd.make_target("donut"), 5, rng())
    with pytest.raises(ValueError):
        sd.sample_target(sd.ring8(), 0, rng())
    with pytest.raises(ValueError):
        sd.TargetSpec("ring8", sd.ring8().centers, 0.0)
    with pytest.raises(ValueError):
        sd.TargetSpec("moons")


def test_latent():
    z = sd.sample_latent(2, 100_000, rng(3))
    assert z.min() >= 0 and z.max() < 1
    assert np.all(np.abs(z.mean(0) - 0.5) < 0.01)
    assert np.array_equal(sd.sample_latent(3, 10, rng(4)), sd.sample_latent(3, 10, rng(4)))


def test_donut_membership():
    d = sd.DonutSpec()
    assert d.contains([(d.outer + d.inner) / 2, 0]).all()
    assert not d.contains(d.center).any()
    with pytest.raises(ValueError):
        sd.DonutSpec(inner=2.0, outer=1.0)


def test_annulus_radial_density():
    d = sd.DonutSpec()
    s = sd.sample_annulus(d, 100_000, rng(5))
    assert d.contains(s).all()
    r = np.hypot(s[:, 0], s[:, 1])
    edges = np.linspace(d.inner, d.outer, 11)
    observed = np.histogram(r, edges)[0]
    expected = len(r) * np.diff(edges ** 2) / (d.outer ** 2 - d.inner ** 2)
    assert stats.chisquare(observed, expected).pvalue > 1e-3


def test_donut_trainset_size_and_replay():
    d = sd.DonutSpec(train_size=37)
    a = sd.donut_trainset(d, rng(6))
    assert a.shape == (37, 2)
    assert np.array_equal(a, sd.donut_trainset(d, rng(6)))


def test_toy_pose():
    data = sd.toy_pose_dataset(10_000, rng(7))
    assert data.y.shape == (10_000, 4)
    np.testing.assert_array_equal(data.y[:, :2], data.x)
    np.testing.assert_allclose(np.linalg.norm(data.y[:, 2:] - data.x, axis=1), 1.0, atol=1e-12)
    assert abs(data.mode.mean() - 0.5) < 0.03
    modes = sd.toy_pose_modes(data.x[:1])[0]
    assert np.std(modes[:, 1]) == pytest.approx(np.sin(np.pi / 4))
    assert data.V.tolist() == [1, 1, 0, 0]


def test_six_sigma():
    for spec in (sd.ring8(), sd.grid25()):
        s = sd.sample_target(spec, 50_000, rng(8))
        d = np.sqrt(((s[:, None] - spec.centers[None]) ** 2).sum(-1)).min(1)
        assert d.max() < 6 * spec.std


def test_csv_roundtrip(tmp_path):
    pts = sd.sample_target(sd.ring8(), 20, rng(9))
    sd.write_csv(tmp_path / "s.csv", pts, ["x", "y"])
    back, names = sd.read_csv(tmp_path / "s.csv")
    assert names == ["x", "y"]
    assert np.array_equal(back, pts)
    assert (tmp_path / "s.csv").read_text(encoding="utf-8").splitlines()[0] == "x,y"
