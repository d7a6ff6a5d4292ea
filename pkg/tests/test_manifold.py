import math

import numpy as np
import pytest

from roughkit import manifold as M
from roughkit.jets import LinearJet, SympyJet
from roughkit.roughpath import pwl_signature

COVER = [(0.0, 0.375, "angle0"), (0.3125, 0.6875, "angle1"), (0.625, 1.0, "angle0")]


def _circle(atlas, radius=1.0, samples=1025):
    times = np.linspace(0.0, 1.0, samples)
    angles = 2 * math.pi * times
    return M.manifold_path_from_samples(
        atlas, times, lambda name, ts: M.circle_angles(atlas[name], np.interp(ts, times, angles)), COVER, p=2.5)


def test_chart_and_atlas_validation():
    inv = SympyJet.from_strings(["cos(t)", "sin(t)"], ["t"])
    with pytest.raises(ValueError):
        M.Chart("bad", inv, [0.0, 0.0], [1.0, 1.0])
    chart = M.Chart("c", inv, [-1.0], [1.0])
    with pytest.raises(ValueError):
        M.Atlas([chart, chart])
    with pytest.raises(ValueError):
        M.Atlas([])
    with pytest.raises(KeyError):
        M.Atlas([chart])["missing"]
    with pytest.raises(ValueError):
        chart.from_ambient([1.0, 0.0])
    assert chart.contains([[0.0], [0.95]], margin=0.1).tolist() == [True, False]


def test_circle_transitions():
    atlas = M.circle_atlas()
    move = atlas.transition("angle0", "angle1")
    assert move([1.0])[0] == pytest.approx(1.0)
    assert move([-1.0])[0] == pytest.approx(2 * math.pi - 1.0)
    assert M.circle_angles(atlas["angle1"], [-1.0])[0, 0] == pytest.approx(2 * math.pi - 1.0)


def test_sphere_atlas_json_roundtrip():
    atlas = M.sphere_atlas()
    again = M.Atlas.from_json(atlas.to_json())
    assert again.names() == atlas.names()
    y = np.array([[0.3, -0.4], [1.1, 0.2]])
    for name in atlas.names():
        assert again[name].to_ambient(y) == pytest.approx(atlas[name].to_ambient(y))
        assert np.array_equal(again[name].lower, atlas[name].lower)
    assert again.transition("south", "north")(y) == pytest.approx(atlas.transition("south", "north")(y))
    with pytest.raises(ValueError):
        M.Atlas.from_json("{oops")


def test_cover_must_stay_in_chart():
    atlas = M.circle_atlas()
    times = np.linspace(0.0, 1.0, 65)
    angles = np.column_stack([np.linspace(-1.0, 3.5, 65)])
    with pytest.raises(M.ChartDomainError):
        M.manifold_path_from_samples(atlas, times, {"angle0": angles}, [(0.0, 1.0, "angle0")])
    with pytest.raises(ValueError):
        M.manifold_path_from_samples(atlas, times, {"angle1": angles}, [(0.0, 0.3, "angle1")])


def test_normal_form_integrates_to_zero():
    # F(x) v = x2 <x, v> vanishes on tangent vectors of the circle
    atlas = M.circle_atlas()
    X = _circle(atlas)
    assert X.validate(tol=1e-6)["passed"]
    form = M.ManifoldOneForm.from_ambient(atlas, SympyJet.from_strings(["x2*x1", "x2*x2"], ["x1", "x2"], (1, 2)))
    assert abs(M.manifold_rough_integral(form, X)["value"][0]) < 1e-10


def test_constrained_check_identity_and_off_sphere():
    t = np.linspace(0.0, 1.0, 1025)
    on_circle = pwl_signature(np.column_stack([t, np.cos(t), np.sin(t)]), 2, p=2.5)
    identity = M.constrained_check(on_circle, LinearJet(np.eye(2)), path_tol=1e-10)
    assert identity["defect"] < 1e-12
    wide = pwl_signature(np.column_stack([t, 2 * np.cos(t), 2 * np.sin(t)]), 2, p=2.5)
    report = M.constrained_check(wide, M.radial_projection(2), path_tol=1e-10)
    assert not report["passed"] and report["levels"][1] > 0.1
    with pytest.raises(M.ChartDomainError):
        M.constrained_check(wide, M.radial_projection(2), neighbourhood=lambda x: np.linalg.norm(x, axis=1) < 1.5)
