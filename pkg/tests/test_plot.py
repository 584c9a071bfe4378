import numpy as np
import pytest

from ndiv import plot
from ndiv.loss import normdist
from ndiv.synthdata import DonutSpec, ring8


def test_scatter_deterministic_and_canvas():
    pts = np.random.default_rng(0).normal(size=(50, 2))
    a = plot.scatter_svg(pts, DonutSpec())
    assert a == plot.scatter_svg(pts, DonutSpec())
    assert 'width="800" height="800"' in a
    assert a.count('r="2"') == 50
    assert a.count('stroke="#d62728"') == 2


def test_scatter_centers():
    svg = plot.scatter_svg(np.zeros((3, 2)), centers=ring8().centers)
    assert svg.count('r="4"') == 8


def test_heatmap_rect_count():
    D = normdist(np.random.default_rng(1).normal(size=(5, 2))).D.value
    assert plot.heatmap_svg(D).count("<rect") == 25


def test_curve():
    svg = plot.curve_svg({"a": ([1, 2, 3], [0.0, 1.0, 0.5]), "b": ([1, 2], [2.0, 2.0])})
    assert svg.count("<polyline") == 2


@pytest.mark.parametrize("fn, arg", [(plot.scatter_svg, np.zeros((0, 2))),
                                     (plot.curve_svg, {}),
                                     (plot.heatmap_svg, np.zeros((0, 0)))])
def test_empty_inputs(fn, arg):
    with pytest.raises(ValueError):
        fn(arg)
