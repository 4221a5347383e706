import math
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from quanta.plot import PlotError, PlotSpec, Series, render_heatmap, render_svg

NS = "{http://www.w3.org/2000/svg}"


def parse(svg):
    return ET.fromstring(svg)


def tick_map(root, cls, attr):
    """Fit pixel = a * value + b from the tick marks of one axis."""
    ticks = [(float(el.get("data-value")), float(el.get(attr))) for el in root.iter(f"{NS}line") if el.get("class") == cls]
    v, px = np.array(ticks).T
    a, b = np.polyfit(v, px, 1)
    return a, b


def test_axes_only():
    root = parse(render_svg(PlotSpec()))
    assert root.find(f"{NS}rect[@class='frame']") is not None
    assert not [el for el in root.iter(f"{NS}polyline")]


def test_deterministic():
    spec = PlotSpec([Series("a", [(1, 2), (10, 0.5)]), Series("b", [(2, 1), (20, 0.1)])], title="t")
    assert render_svg(spec) == render_svg(spec)


def test_power_law_is_straight_in_tick_coordinates():
    x = np.logspace(0, 4, 9)
    y = 3 * x**-0.7
    root = parse(render_svg(PlotSpec([Series("p", list(zip(x, y)))])))
    ax, bx = tick_map(root, "xtick", "x1")
    ay, by = tick_map(root, "ytick", "y1")
    line = next(el for el in root.iter(f"{NS}polyline"))
    pts = np.array([[float(v) for v in p.split(",")] for p in line.get("points").split()])
    lx = (pts[:, 0] - bx) / ax
    ly = (pts[:, 1] - by) / ay
    np.testing.assert_allclose(lx, np.log10(x), atol=0.01)
    slope = np.polyfit(lx, ly, 1)[0]
    assert slope == pytest.approx(-0.7, abs=0.01)


def test_linear_axes():
    svg = render_svg(PlotSpec([Series("l", [(-1, -2), (3, 4)])], x_scale="linear", y_scale="linear"))
    assert "polyline" in svg


@pytest.mark.parametrize("pt", [(0.0, 1.0), (1.0, -2.0)])
def test_log_rejects_nonpositive(pt):
    with pytest.raises(PlotError):
        render_svg(PlotSpec([Series("bad", [(1.0, 1.0), pt])]))


def test_rejects_nonfinite():
    with pytest.raises(PlotError):
        render_svg(PlotSpec([Series("bad", [(1.0, math.inf)])], y_scale="linear"))


def test_heatmap():
    M = np.eye(10)
    svg = render_heatmap(M, max_cells=5)
    assert len(re.findall("<rect", svg)) == 25
    with pytest.raises(PlotError):
        render_heatmap(np.ones((2, 3)))
