"""Acceptance checks, one group per criterion.

Run ``pytest tests/test_acceptance.py`` to get a PASS/FAIL line per
criterion in the terminal summary.
"""

from __future__ import annotations

import itertools
import math
import time

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import linregress

from roughkit import manifold as M
from roughkit import tensor as T
from roughkit import words as W
from roughkit.controlled import check_controlled, controlled_from_function
from roughkit.identities import run_suite
from roughkit.jets import SympyJet
from roughkit.oracle import SampledPath, riemann_iterated
from roughkit.rde import gubinelli_defect, linear_field, solve, verify_change_of_variable
from roughkit.roughpath import (
    check_rough_axioms,
    complete_almost,
    dyadic_grid,
    lyons_extend,
    max_increment_gap,
    perturbed_path,
    pure_area_path,
    pwl_signature,
    sym_defect,
)

criterion = pytest.mark.criterion


def _pairs_with_origin(grid):
    grid = np.asarray(grid, dtype=float)
    lefts = np.concatenate([grid[:-1], np.full(grid.size - 1, grid[0])])
    rights = np.concatenate([grid[1:], grid[1:]])
    return lefts, rights


def _planar(samples=1025, p=2.5, level=2):
    t = np.linspace(0.0, 1.0, samples)
    return pwl_signature(np.column_stack([t, 0.8 * np.cos(2 * t), 0.6 * np.sin(3 * t)]), level, p=p)


# 1 -------------------------------------------------------------------------------


def _word_tuples(m, total, d=3):
    for lens in itertools.product(range(1, total + 1), repeat=m):
        if sum(lens) <= total:
            yield from itertools.product(*(W.all_words(d, n) for n in lens))


def _compositions(m):
    return [c for r in range(1, m + 1) for c in itertools.product(range(1, m + 1), repeat=r) if sum(c) == m]


@criterion(1, "combinatorial identities hold exactly, exhaustively")
def test_combinatorial_identities_exhaustive():
    start = time.perf_counter()
    checked = 0
    for m in (1, 2, 3):
        comps = _compositions(m)
        for ks in _word_tuples(m, 6):
            assert W.ordered_compat_lhs(*ks) == W.ordered_compat_rhs(*ks), ks
            for sizes in comps:
                lhs, rhs = W.graded_ordered_union(sizes, ks)
                assert lhs == rhs, (sizes, ks)
            checked += 1
        for li in range(7):
            for lj in range(7 - li):
                for i in W.all_words(3, li):
                    for j in W.all_words(3, lj):
                        assert W.dual_reduced_lhs(i, j, m) == W.dual_reduced_rhs(i, j, m), (i, j, m)
        for n in range(7):
            for word in W.all_words(3, n):
                a = T.TensorSeries.from_words(3, max(n, 1), {word: 1}, kind=T.RATIONAL)
                sym = T.symmetrize_slots(T.ordered_shuffle_coproduct(a, m, reduced=True)).scale(math.factorial(m))
                assert sym == T.shuffle_coproduct(a, m, reduced=True), (word, m)
    assert checked > 10000
    assert time.perf_counter() - start < 30


# 2 -------------------------------------------------------------------------------


def _slot_concat(A, B, N):
    out = T.MultiTensor(A.arity, N)
    for ka, va in A.entries.items():
        la = sum(map(len, ka))
        for kb, vb in B.entries.items():
            if la + sum(map(len, kb)) <= N:
                out.add(tuple(x + y for x, y in zip(ka, kb)), va * vb)
    return out


@criterion(2, "bialgebra identities exact in rational mode")
def test_bialgebra_identities_rational():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    half = T.ordered_shuffle_mul
    for k in range(100):
        d, N = (2, 1 + k % 5) if k % 2 else (3, 1 + k % 3)
        a, b, c = (T.random_series(d, N, rng) for _ in range(3))
        assert T.pair(T.shuffle_mul(a, b), c) == T.shuffle_coproduct(c).pair(a, b)
        assert T.pair(T.concat_mul(a, b), c) == T.deconcat(c).pair(a, b)
        assert T.shuffle_coproduct(T.concat_mul(a, b)) == _slot_concat(T.shuffle_coproduct(a), T.shuffle_coproduct(b), N)
        x, y, z = (T.random_series(d, N, rng, unit=False) for _ in range(3))
        assert half(x, half(y, z)) == half(T.shuffle_mul(x, y), z)
        assert half(x, y) + half(y, x) == T.shuffle_mul(x, y)
    assert time.perf_counter() - start < 10


# 3 -------------------------------------------------------------------------------


def _parabola(samples=500):
    t = np.linspace(0.0, 1.0, samples)
    pts = np.column_stack([t, t**2])
    return t, pts, pwl_signature(np.column_stack([t, pts]), 3)


def _check_against_oracle(level):
    t, pts, X = _parabola()
    sig = X(0.0, 1.0)
    oracle = SampledPath(t, pts)
    for word in W.all_words(2, level):
        ref = riemann_iterated(oracle, word)
        assert abs(sig[word] - ref) < 5e-3 * abs(ref), word


@criterion(3, "polyline signature matches the quadrature oracle")
@pytest.mark.parametrize("level", [1, 2])
def test_signature_matches_riemann_oracle(level):
    _check_against_oracle(level)


@criterion(3, "polyline signature matches the quadrature oracle")
@pytest.mark.xfail(strict=True, reason="the left-point oracle is first order; at its 500-point cap its own "
                                       "bias on length-3 words is 6e-3 to 8e-3 relative")
def test_signature_matches_riemann_oracle_level_three():
    _check_against_oracle(3)


@criterion(3, "polyline signature matches the quadrature oracle")
def test_level_three_gap_is_oracle_bias():
    t, pts, X = _parabola()
    sig = X(0.0, 1.0)
    tc = np.linspace(0.0, 1.0, 250)
    h_fine, h_coarse = t[1], tc[1]
    for word in W.all_words(2, 3):
        fine = riemann_iterated(SampledPath(t, pts), word)
        coarse = riemann_iterated(SampledPath(tc, np.column_stack([tc, tc**2])), word)
        # the gap scales with the mesh, and a first-order extrapolation removes it
        ratio = (sig[word] - coarse) / (sig[word] - fine)
        assert abs(ratio - h_coarse / h_fine) < 0.1, word
        extrapolated = (h_coarse * fine - h_fine * coarse) / (h_coarse - h_fine)
        assert abs(extrapolated - sig[word]) < 5e-4 * abs(sig[word]), word


@criterion(3, "polyline signature matches the quadrature oracle")
def test_parabola_signature_axioms():
    _, _, X = _parabola()
    report = check_rough_axioms(X, np.linspace(0, 1, 17))
    assert report.mult_defect < 1e-10
    assert report.shuffle_defect < 1e-10


# 4 -------------------------------------------------------------------------------


def _constructed_paths():
    planar = _planar()
    yield "polyline p=3.5", _planar(p=3.5, level=3)
    yield "pure area", pure_area_path([[0, 0.4], [-0.4, 0]], start=[0.1, 0.2])
    yield "pure area extended", lyons_extend(pure_area_path([[0, 0.4], [-0.4, 0]]), 3)
    yield "polyline extended", lyons_extend(planar, 3)
    F = SympyJet.from_strings(["x1 + x2**2", "sin(x1)*x2"], ["x1", "x2"])
    # the symmetric defect of a lift is of the order of its sewing tolerance
    yield "lift", controlled_from_function(F, planar).lift(tol=1e-10)
    yield "lift p=3.5", controlled_from_function(F, _planar(p=3.5, level=3)).lift(tol=1e-10)
    yield "completion", complete_almost(perturbed_path(planar, 0.01, seed=3), geometrize=True, tol=5e-6)
    sol = solve(linear_field([[[0.2, 1.0], [-1.0, 0.1]], [[0.3, 0.0], [0.5, -0.2]]]), planar, [1.0, 0.5])
    yield "rde lift", sol.controlled().lift(tol=1e-10)


@criterion(4, "symmetric parts are tensor powers of the first level")
def test_symmetric_part_is_power_of_first_level():
    lefts, rights = _pairs_with_origin(np.linspace(0, 1, 9))
    for name, X in _constructed_paths():
        assert sym_defect(X, lefts, rights, level=3) < 1e-9, name


# 5 -------------------------------------------------------------------------------

_MAPS = [["x1 + x2**2", "x1*x2"], ["x1**3 - x2", "x2 + 0.5*x1**2"], ["x1", "x2", "x1**2 + x2**2 - x1*x2"]]


@criterion(5, "lifted pushforward equals the image polyline signature")
@pytest.mark.parametrize("p", [1.5, 2.5, 3.5])
def test_lift_matches_image_signature(p):
    coarse = np.linspace(0.0, 1.0, 33)
    X = pwl_signature(np.column_stack([coarse, 0.8 * np.cos(2 * coarse) + 0.1 * coarse, 0.6 * np.sin(3 * coarse)]),
                      int(p), p=p)
    lefts, rights = _pairs_with_origin(dyadic_grid(0, 1, 3))
    lefts, rights = np.append(lefts, [0.13, 0.41]), np.append(rights, [0.77, 0.59])
    for exprs in _MAPS:
        F = SympyJet.from_strings(exprs, ["x1", "x2"])
        lifted = controlled_from_function(F, X).lift(tol=1e-10)
        gaps = []
        for k in (4, 7, 10):
            fine = np.linspace(0.0, 1.0, 32 * 2**k + 1)
            image = pwl_signature(np.column_stack([fine, F(X.trace(fine))]), int(p))
            gaps.append(max_increment_gap(lifted, image, lefts, rights, int(p)))
        assert gaps[-1] < 1e-5, (exprs, gaps)
        assert gaps[-1] < gaps[0], (exprs, gaps)


# 6 -------------------------------------------------------------------------------


@criterion(6, "identity battery below 1e-6 on the standard scenarios")
def test_identity_battery():
    records = run_suite(threshold=1e-6)
    assert {r["scenario"] for r in records} == {"scalar smooth", "planar smooth", "pure area"}
    assert len(records) == 24
    bad = [(r["name"], r["scenario"], r["defect"]) for r in records if not r["defect"] < 1e-6]
    assert not bad


# 7 -------------------------------------------------------------------------------


def _scalar(p, samples=1025):
    t = np.linspace(0.0, 1.0, samples)
    return pwl_signature(np.column_stack([t, 0.5 * np.sin(3 * t) + t]), max(1, int(p)), p=p)


@criterion(7, "RDE closed forms, convergence order and fixed point")
@pytest.mark.parametrize("p", [2.5, 3.5])
def test_rde_scalar_exponential(p):
    X = _scalar(p)
    sol = solve(linear_field([[[1.0]]]), X, [0.7], tol=1e-9)
    increment = X.trace([1.0])[0, 0] - X.trace([0.0])[0, 0]
    assert abs(sol.values[-1, 0] - 0.7 * math.exp(increment)) < 1e-6


@criterion(7, "RDE closed forms, convergence order and fixed point")
def test_rde_commuting_linear():
    A1 = np.array([[0.3, 0.5], [0.5, -0.1]])
    A2 = 0.5 * A1 @ A1 - 0.2 * np.eye(2)
    y0 = np.array([1.0, -0.4])
    for X in (_planar(), pure_area_path([[0, 0.7], [-0.7, 0]], start=[0.3, -0.2])):
        sol = solve(linear_field([A1, A2]), X, y0, tol=1e-9)
        dx = X.trace([1.0])[0] - X.trace([0.0])[0]
        exact = expm(A1 * dx[0] + A2 * dx[1]) @ y0
        assert np.max(np.abs(sol.values[-1] - exact)) < 1e-6


def _fixed_depth_errors(F, X, y0, exact, depths):
    return [float(np.max(np.abs(solve(F, X, y0, tol=np.inf, min_depth=n, max_depth=n).values[-1] - exact)))
            for n in depths]


@criterion(7, "RDE closed forms, convergence order and fixed point")
def test_rde_convergence_order():
    depths = list(range(3, 10))
    # non-commuting linear fields on a pure area: Y_1 = exp(sum a_ij A_j A_i) y0
    A = [np.array([[0.0, 1.0], [-1.0, 0.2]]), np.array([[0.5, 0.0], [0.3, -0.4]])]
    area = np.array([[0.0, 0.9], [-0.9, 0.0]])
    M2 = sum(area[i, j] * A[j] @ A[i] for i in range(2) for j in range(2))
    y0 = np.array([1.0, 0.5])
    X = pure_area_path(area)
    errors = _fixed_depth_errors(linear_field(A), X, y0, expm(M2) @ y0, depths)
    slope = linregress(np.log(2.0 ** -np.array(depths)), np.log(errors)).slope
    assert slope >= (X.floor_p + 1) / X.p - 1 - 0.2

    Xs = _scalar(1.5, samples=4097)
    inc = Xs.trace([1.0])[0, 0] - Xs.trace([0.0])[0, 0]
    errors = _fixed_depth_errors(linear_field([[[1.0]]]), Xs, [0.7], 0.7 * math.exp(inc), depths)
    slope = linregress(np.log(2.0 ** -np.array(depths)), np.log(errors)).slope
    assert slope >= (Xs.floor_p + 1) / Xs.p - 1 - 0.2


@criterion(7, "RDE closed forms, convergence order and fixed point")
def test_rde_gubinelli_fixed_point():
    F = SympyJet.from_strings(["sin(y1) + 0.5", "0.3*cos(y1)*y1"], ["y1"], out_shape=(1, 2))
    for X in (_planar(), pure_area_path([[0, 0.5], [-0.5, 0]], start=[0.1, 0.0])):
        sol = solve(F, X, [0.4], tol=1e-7)
        assert gubinelli_defect(sol, dyadic_grid(0, 1, 4), tol=1e-7) < 1e-6


@criterion(7, "RDE closed forms, convergence order and fixed point")
def test_rde_change_of_variable():
    F = SympyJet.from_strings(["0.5*y1", "0.2*y1*cos(y1)"], ["y1"], out_shape=(1, 2))
    g = SympyJet.from_strings(["log(y1)"], ["y1"])
    g_inv = SympyJet.from_strings(["exp(y1)"], ["y1"])
    report = verify_change_of_variable(F, _planar(), [1.3], g, g_inv, tol=1e-9)
    assert report["defect"] < 1e-6
    assert report["trace_defect"] < 1e-6


# 8 -------------------------------------------------------------------------------


@criterion(8, "almost rough paths are repaired; geometrize is exact")
@pytest.mark.parametrize("p, amplitude, tol, geometrize", [(2.0, 0.05, 1e-6, False), (2.5, 0.01, 5e-6, True)])
def test_almost_rough_path_repair(p, amplitude, tol, geometrize):
    X = _planar(p=p)
    noisy = perturbed_path(X, amplitude, seed=1)
    repaired = complete_almost(noisy, geometrize=geometrize, tol=tol)
    lefts, rights = _pairs_with_origin(dyadic_grid(0, 1, 4))
    assert max_increment_gap(noisy, X, lefts, rights) > 1e-3
    assert max_increment_gap(repaired, X, lefts, rights) < 1e-5


@criterion(8, "almost rough paths are repaired; geometrize is exact")
def test_geometrize_exact_in_rational_mode():
    rng = np.random.default_rng(8)
    for k in range(20):
        d, N = (2, 2 + k % 4) if k % 2 else (3, 2 + k % 2)
        a = T.random_series(d, N, rng, unit=True)
        g = T.geometrize(a)
        report = T.is_grouplike(g)
        assert report["defect"] == 0 and report["passed"]
        for word in T.lyndon_words(d, N):
            assert g[word] == a[word]


# 9 -------------------------------------------------------------------------------


def _circle_path(atlas, cover, samples=4097, loops=1.0, wobble=0.3):
    times = np.linspace(0.0, 1.0, samples)
    angles = 2 * math.pi * loops * times + wobble * np.sin(2 * math.pi * times)
    return M.manifold_path_from_samples(
        atlas, times, lambda name, ts: M.circle_angles(atlas[name], np.interp(ts, times, angles)), cover, p=2.5)


def _angle_form():
    return SympyJet.from_strings(["-y/(x**2+y**2)", "x/(x**2+y**2)"], ["x", "y"], out_shape=(1, 2))


@criterion(9, "manifold layer: winding, chart independence, constraints, development")
def test_circle_winding_number():
    atlas = M.circle_atlas()
    X = _circle_path(atlas, [(0.0, 0.375, "angle0"), (0.3125, 0.6875, "angle1"), (0.625, 1.0, "angle0")])
    value = M.manifold_rough_integral(M.ManifoldOneForm.from_ambient(atlas, _angle_form()), X)["value"][0]
    assert abs(value - 2 * math.pi) < 1e-6


@criterion(9, "manifold layer: winding, chart independence, constraints, development")
def test_three_chart_circle_independence():
    atlas = M.circle_atlas(offsets=(0.0, 2 * math.pi / 3, 4 * math.pi / 3))
    # pulls back to (1 + sin cos (sin - cos)) dtheta, antiderivative theta + (sin^3 + cos^3) / 3
    form = M.ManifoldOneForm.from_ambient(
        atlas, SympyJet.from_strings(["x**2 - y", "x + y**2"], ["x", "y"], out_shape=(1, 2)))
    # the loop crosses the cuts of angle0, angle1, angle2 at t = 0.5, 0.868, 0.132
    covers = [
        [(0.0, 0.375, "angle0"), (0.3125, 0.75, "angle1"), (0.6875, 1.0, "angle2")],
        [(0.0, 0.25, "angle1"), (0.1875, 0.625, "angle2"), (0.5625, 1.0, "angle0")],
        [(0.0, 0.125, "angle2"), (0.0625, 0.4375, "angle0"), (0.375, 0.8125, "angle1"), (0.75, 1.0, "angle2")],
    ]
    values = []
    for cover in covers:
        X = _circle_path(atlas, cover)
        for piece in X.pieces:
            chart_trace = piece.path.trace(np.linspace(piece.start, piece.end, 257))
            assert np.max(np.abs(np.diff(chart_trace[:, 0]))) < 0.1
        report = X.validate(tol=1e-6)
        assert report["passed"], report["overlaps"]
        values.append(M.manifold_rough_integral(form, X)["value"][0])
        lo, hi = X.overlaps()[0]
        values.append(M.manifold_rough_integral(form, X, cuts=[lo + 0.1 * (hi - lo), *X.cuts()[1:]])["value"][0])
    for a, b in itertools.combinations(values, 2):
        assert abs(a - b) < 1e-6
    assert abs(values[0] - 2 * math.pi) < 1e-6


@criterion(9, "manifold layer: winding, chart independence, constraints, development")
def test_circle_constrained_check():
    t = np.linspace(0.0, 2 * math.pi, 2**14 + 1)
    X = pwl_signature(np.column_stack([t / t[-1], np.cos(t), np.sin(t)]), 2, p=2.5)
    report = M.constrained_check(X, M.radial_projection(2), neighbourhood=lambda x: np.linalg.norm(x, axis=1) > 0.5)
    assert report["passed"] and report["defect"] < 1e-6


@criterion(9, "manifold layer: winding, chart independence, constraints, development")
def test_sphere_development_geodesic():
    v = np.array([0.8 * math.pi, 0.6 * math.pi])
    ts = np.array([0.0, 1.0])
    Z = pwl_signature(np.column_stack([ts, np.outer(ts, v)]), 2, p=2.5)
    driver = M.ManifoldRoughPath(M.flat_atlas(2), [M.Piece(0.0, 1.0, "flat", Z)])
    frames = M.frame_bundle_atlas(M.sphere_atlas())
    sol = M.solve_manifold_rde(M.development_fields(), driver, frames, "south", [0, 0, 0.5, 0, 0, 0.5], tol=1e-7)
    assert sol.switches(), "the geodesic should cross into the second chart"
    times = np.linspace(0.0, 1.0, 33)
    out = sol.trace(times)
    speed = np.linalg.norm(v)
    exact = np.column_stack([np.outer(np.sin(speed * times), v / speed), -np.cos(speed * times)])
    assert np.max(np.abs(np.linalg.norm(out[:, :3], axis=1) - 1)) < 1e-6
    assert np.max(np.abs(out[:, :3] - exact)) < 1e-6


@criterion(9, "manifold layer: winding, chart independence, constraints, development")
def test_development_chart_schedule_independence():
    t = np.linspace(0.0, 1.0, 513)
    Z = pwl_signature(np.column_stack([t, 2.6 * t + 0.3 * np.sin(5 * t), 1.8 * t**2 - 0.4 * np.sin(3 * t)]), 2, p=2.5)
    driver = M.ManifoldRoughPath(M.flat_atlas(2), [M.Piece(0.0, 1.0, "flat", Z)])
    frames = M.frame_bundle_atlas(M.sphere_atlas())
    times = np.linspace(0.0, 1.0, 33)
    runs = [M.solve_manifold_rde(M.development_fields(), driver, frames, "south", [0, 0, 0.5, 0, 0, 0.5],
                                 tol=1e-7, margin=margin) for margin in (0.1, 0.3)]
    assert [len(r.switches()) for r in runs] == [0, 1]
    traces = [r.trace(times) for r in runs]
    assert np.max(np.abs(traces[0] - traces[1])) < 1e-6
    assert np.max(np.abs(np.linalg.norm(traces[0][:, :3], axis=1) - 1)) < 1e-6


# 10 ------------------------------------------------------------------------------


def _dyadic_weierstrass(t, hurst, phase):
    # self-similar under t -> 2t, so dyadic-aligned increments scale exactly
    return sum(2.0 ** (-k * hurst) * np.cos(2 * math.pi * 2.0**k * t + phase) for k in range(30) if 2**k < t.size)


def _aligned_pairs(kmin, kmax):
    lefts, rights = [], []
    for k in range(kmin, kmax + 1):
        h = 2.0**-k
        s = np.arange(2**k) * h
        lefts.append(s)
        rights.append(s + h)
    return np.concatenate(lefts), np.concatenate(rights)


@criterion(10, "controlledness exponents of F(X)")
@pytest.mark.parametrize("p, d", [(1.5, 1), (2.5, 2), (3.3, 2)])
def test_controlledness_slopes(p, d):
    t = np.linspace(0.0, 1.0, 2**14 + 1)
    phases = (0.7, 2.0)
    X = pwl_signature(np.column_stack([t] + [_dyadic_weierstrass(t, 1 / p, phases[i]) for i in range(d)]),
                      int(p), p=p)
    names = [f"x{i + 1}" for i in range(d)]
    F = SympyJet.from_strings(["sin(x1) + 0.5*x1**2" + (" + x1*x2" if d > 1 else "")], names)
    report = check_controlled(controlled_from_function(F, X), pairs=_aligned_pairs(2, 9), slack=0.15)
    assert set(report.slopes) == set(range(int(p)))
    for n, slope in report.slopes.items():
        assert abs(slope - (int(p) - n) / p) <= 0.15, (n, slope)
