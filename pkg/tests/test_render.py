import re

import pytest

from conftest import case_fleet, sample_network
from minerail.dispatch import solve_offline
from minerail.render import BASE_COLORS, corridor_positions, render_svg, train_color
from minerail.tsnet import expand


@pytest.fixture(scope="module")
def case3():
    return solve_offline(sample_network(), case_fleet(3))[0]


def test_one_polyline_per_train(case3):
    svg = render_svg(case3, sample_network(), "Case 3")
    names = re.findall(r'<polyline data-train="([^"]+)"', svg)
    assert names == sorted(case3.trains)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "Case 3" in svg


def test_render_is_deterministic(case3):
    assert render_svg(case3, sample_network()) == render_svg(case3, sample_network())


def test_colors():
    assert [train_color(i) for i in range(3)] == list(BASE_COLORS)
    more = [train_color(i) for i in range(3, 12)]
    assert len(set(more)) == len(more)
    assert all(re.fullmatch(r"#[0-9a-f]{6}", c) for c in more)


def test_corridor_layout():
    pos = corridor_positions(expand(sample_network()))
    assert pos["A"] == 0
    assert pos["A"] < pos["B"] < pos["F"]
    assert min(pos["B"], pos["F"]) < pos["B-F.sd'"] < max(pos["B"], pos["F"])


def test_unknown_node_rejected(case3):
    from minerail.dispatch import Event

    broken = solve_offline(sample_network(), case_fleet(1))[0]
    broken.trains["Mtest01"].events.append(Event("Z", 9, 9))
    with pytest.raises(ValueError, match="Z"):
        render_svg(broken, sample_network())


def test_title_is_escaped(case3):
    svg = render_svg(case3, sample_network(), "<a & b>")
    assert "&lt;a &amp; b&gt;" in svg
