import io

import numpy as np
import pytest

from roughkit import roughpath as R
from roughkit import tensor as T
from roughkit.oracle import SampledPath, riemann_iterated


def _planar(n=65, level=3, p=1.0):
    t = np.linspace(0, 1, n)
    return R.PolylinePath(t, np.column_stack([np.cos(3 * t), np.sin(2 * t)]), level, p)


def test_segment_signature_is_exponential():
    X = R.PolylinePath([0.0, 1.0], [[0.0, 0.0], [0.3, -0.5]], 3)
    lay = X.layout
    expected = T.flat_exp_linear(np.array([[0.3, -0.5]]), lay)[0]
    assert X.increment(0.0, 1.0) == pytest.approx(expected)
    assert X.increment(0.25, 0.75)[lay.index((1,))] == pytest.approx(0.15)


def test_polyline_against_riemann_oracle():
    t = np.linspace(0, 1, 300)
    pts = np.column_stack([t, t**2])
    X = R.PolylinePath(t, pts, 2)
    oracle = riemann_iterated(SampledPath(t, pts), (1, 2))
    # left-point sums are first order, so the oracle is only good to about h
    assert X(0.0, 1.0)[(1, 2)] == pytest.approx(oracle, abs=2 / 300)
    assert X(0.0, 1.0)[(1, 2)] == pytest.approx(2 / 3, abs=1e-4)


def test_chen_and_shuffle_on_grid():
    X = _planar()
    report = R.check_rough_axioms(X, np.linspace(0, 1, 7))
    assert report.mult_defect < 1e-12 and report.shuffle_defect < 1e-12
    assert report.passed(1e-10)
    assert report.as_dict()["pairs"] == 21


def test_trace_and_restrict():
    X = _planar()
    ts = np.array([0.0, 0.3, 0.9])
    assert X.trace(ts) == pytest.approx(np.column_stack([np.interp(ts, X.times, X.points[:, i]) for i in range(2)]))
    Y = X.restrict(0.25, 0.75)
    assert Y.t0 == 0.25 and Y.increment(0.3, 0.6) == pytest.approx(X.increment(0.3, 0.6))
    with pytest.raises(ValueError):
        Y.increment(0.1, 0.6)


def test_pure_area_validation_and_values():
    a = np.array([[0.0, 1.5], [-1.5, 0.0]])
    X = R.pure_area_path(a)
    inc = X(0.2, 0.6)
    assert inc[(1, 2)] == pytest.approx(0.6) and inc[(1,)] == 0
    with pytest.raises(ValueError):
        R.pure_area_path(np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        R.pure_area_path(a, p=1.5)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        R.PolylinePath([0.0, 0.0], [[1.0], [2.0]], 2)
    with pytest.raises(ValueError):
        R.PolylinePath([0.0, 1.0], [[1.0], [2.0]], 2, p=4.0)
    X = _planar()
    with pytest.raises(ValueError):
        X.pair_increments([0.5], [0.2])


def test_sewing_limit_of_riemann_sums():
    res = R.sewing_limit(lambda s, t: (t - s) * s**2, 0.0, 1.0, theta=2.0, tol=1e-5, max_depth=18)
    assert res.value == pytest.approx(1 / 3, rel=1e-4)
    with pytest.raises(R.SewingError):
        R.sewing_limit(lambda s, t: (t - s) * s**2, 0.0, 1.0, theta=2.0, tol=1e-14, max_depth=3)
    with pytest.raises(ValueError):
        R.sewing_limit(lambda s, t: t - s, 0.0, 1.0, theta=1.0)


def test_lyons_extension_of_polyline_matches_exact_signature():
    X3 = _planar(level=3)
    X2 = _planar(level=2, p=2.5)
    ext = R.lyons_extend(X2, 3, tol=1e-10)
    assert R.max_increment_gap(ext, X3, [0.1, 0.0], [0.7, 1.0]) < 1e-8
    with pytest.raises(ValueError):
        R.lyons_extend(X2, 2)


def test_completion_removes_noise():
    X = _planar(level=2, p=2.5)
    noisy = R.perturbed_path(X, 0.01, seed=1)
    fixed = R.complete_almost(noisy, geometrize=True, tol=5e-6)
    lefts, rights = [0.0, 0.25], [1.0, 0.5]
    assert R.max_increment_gap(noisy, X, lefts, rights) > 1e-3
    assert R.max_increment_gap(fixed, X, lefts, rights) < 1e-4


def test_pair_noise_is_deterministic():
    s, t = np.array([0.0, 0.25]), np.array([0.5, 1.0])
    a = R.pair_noise(s, t, 5, seed=4)
    assert a.shape == (2, 5) and np.all(np.abs(a) <= 1)
    assert np.array_equal(a, R.pair_noise(s, t, 5, seed=4))
    assert not np.array_equal(a, R.pair_noise(s, t, 5, seed=5))


def test_control_superadditivity():
    assert R.Control(2.0).superadditivity_defect([0.0, 0.3, 1.0]) <= 1e-15
    with pytest.raises(ValueError):
        R.Control(0.0)


def test_csv_roundtrip_and_errors(tmp_path):
    t = np.linspace(0, 1, 5)
    pts = np.column_stack([t, 1 - t])
    text = R.write_path_csv(t, pts)
    times, points = R.read_path_csv(io.StringIO(text))
    assert np.array_equal(times, t) and np.array_equal(points, pts)
    bad = {
        "header.csv": "s,x1\n0,1\n1,2\n",
        "numbers.csv": "t,x1\n0,a\n1,2\n",
        "ragged.csv": "t,x1\n0,1\n1\n",
        "order.csv": "t,x1\n1,1\n0,2\n",
        "empty.csv": "",
    }
    for name, body in bad.items():
        path = tmp_path / name
        path.write_text(body)
        with pytest.raises(ValueError):
            R.read_path_csv(str(path))
