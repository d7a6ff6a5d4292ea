"""Battery of algebraic and analytic identities for controlled paths.

Every check returns one record ``{name, identity, scenario, defect,
threshold, pass}``. Path-level identities are compared in sup norm on a
dyadic grid, coefficient-level identities at a handful of fixed times.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .controlled import (
    controlled_from_function,
    controlled_integral,
    integral_path,
    jet_gap,
    leibniz_product,
    pullback,
    star_change_of_base,
)
from .jets import ComposedJet, DerivativeJet, ProductJet, SympyJet
from .roughpath import DEFAULT_TOL, RoughPath, dyadic_grid, pure_area_path, pwl_signature


@dataclass
class Scenario:
    name: str
    driver: RoughPath

    @property
    def d(self) -> int:
        return self.driver.d


def standard_scenarios(samples: int = 1025, seed: int = 0) -> list[Scenario]:
    """Scalar smooth, planar smooth and pure-area drivers.

    ``seed`` only rotates the phases of the smooth drivers.
    """
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * math.pi, size=2) if seed else np.zeros(2)
    t = np.linspace(0.0, 1.0, samples)
    scalar = np.column_stack([t, 0.5 * np.sin(3 * t + phase[0]) + t])
    planar = np.column_stack([t, np.cos(2 * t + phase[0]) * 0.8, np.sin(3 * t + phase[1]) * 0.6])
    area = np.array([[0.0, 0.3], [-0.3, 0.0]])
    return [
        Scenario("scalar smooth", pwl_signature(scalar, 2, p=2.5)),
        Scenario("planar smooth", pwl_signature(planar, 2, p=2.5)),
        Scenario("pure area", pure_area_path(area, p=2.5, start=[0.2, -0.1])),
    ]


def _map(exprs: list[str], d: int, out_shape=None, prefix: str = "x") -> SympyJet:
    variables = [f"{prefix}{i + 1}" for i in range(d)]
    return SympyJet.from_strings(exprs, variables, out_shape)


def _deform(d: int) -> SympyJet:
    """A polynomial diffeomorphism-like map ``R^d -> R^d``."""
    return _map([f"x{i + 1} + 0.3*x{(i + 1) % d + 1}**2" for i in range(d)], d)


def _twist(d: int) -> SympyJet:
    return _map([f"x{i + 1}*(1 + 0.2*x{(i - 1) % d + 1}) + 0.1" for i in range(d)], d)


def _form(d: int, w: int) -> SympyJet:
    """An integrand ``R^d -> L(R^d, R^w)``."""
    exprs = []
    for i in range(w):
        for j in range(d):
            base = "1 + " if i == j else ""
            exprs.append(f"{base}0.5*x{i % d + 1}*x{j + 1} + 0.1*x{j + 1}**2")
    return _map(exprs, d, (w, d))


def _matrix(d: int, shift: float) -> SympyJet:
    exprs = [f"{shift} + x{i + 1}*x{j + 1} - 0.2*x{(i + j) % d + 1}" for i in range(d) for j in range(d)]
    return _map(exprs, d, (d, d))


def _grid_defect(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def _times(X: RoughPath, n: int = 5) -> np.ndarray:
    return np.linspace(X.t0, X.t1, n)


def change_of_variable(X: RoughPath, tol: float) -> float:
    """``F(X_t) - F(X_0)`` against ``int_0^t DF(X) dX``."""
    d = X.d
    F = _map([f"sin(x{i + 1}) + 0.5*x{(i + 1) % d + 1}**3" for i in range(d)], d)
    grid = dyadic_grid(X.t0, X.t1, 4)
    integral = integral_path(controlled_from_function(DerivativeJet(F), X), grid, tol=tol)
    values = F(X.trace(grid))
    return _grid_defect(values - values[0], integral)


def integral_associativity(X: RoughPath, tol: float) -> float:
    """``int K dI`` against ``int (K * I) . H dX`` where ``I = int H dX``."""
    d = X.d
    H = controlled_from_function(_form(d, d), X)
    Ibar = controlled_integral(H, tol=tol)
    K = controlled_from_function(_map([f"1 + x{j + 1}**2" for j in range(d)], d, (1, d)), Ibar.lift(tol=tol))
    grid = dyadic_grid(X.t0, X.t1, 4)
    lhs = integral_path(K, grid, tol=tol)
    rhs = integral_path(leibniz_product(star_change_of_base(K, Ibar), H), grid, tol=tol)
    return _grid_defect(lhs, rhs)


def pushforward_pullback(X: RoughPath, tol: float) -> float:
    """``int H d(F_* X)`` against ``int F^* H dX``."""
    d = X.d
    F = _deform(d)
    pushed = controlled_from_function(F, X).lift(tol=tol)
    H = controlled_from_function(_map([f"x{j + 1}**2 + 1" for j in range(d)], d, (1, d)), pushed)
    grid = dyadic_grid(X.t0, X.t1, 4)
    return _grid_defect(integral_path(H, grid, tol=tol), integral_path(pullback(F, H), grid, tol=tol))


def star_associativity(X: RoughPath, tol: float) -> float:
    """``(J * K) * H`` against ``J * (K * H)``."""
    d = X.d
    H = controlled_from_function(_deform(d), X)
    K = controlled_from_function(_twist(d), H.lift(tol=tol))
    J_fn = _map([f"x{i + 1}**3 - x{i + 1}" for i in range(d)], d)
    left = star_change_of_base(star_change_of_base(controlled_from_function(J_fn, K.lift(tol=tol)), K), H)
    KH = star_change_of_base(K, H)
    right = star_change_of_base(controlled_from_function(J_fn, KH.lift(tol=tol)), KH)
    return jet_gap(left, right, _times(X))


def star_distributes_over_product(X: RoughPath, tol: float) -> float:
    """``(J . K) * H`` against ``(J * H) . (K * H)``."""
    d = X.d
    H = controlled_from_function(_deform(d), X)
    ref = H.lift(tol=tol)
    J = controlled_from_function(_matrix(d, 1.0), ref)
    K = controlled_from_function(_matrix(d, -0.5), ref)
    left = star_change_of_base(leibniz_product(J, K), H)
    right = leibniz_product(star_change_of_base(J, H), star_change_of_base(K, H))
    return jet_gap(left, right, _times(X))


def product_associativity(X: RoughPath, tol: float) -> float:
    """``(J . K) . L`` against ``J . (K . L)``."""
    d = X.d
    J = controlled_from_function(_matrix(d, 1.0), X)
    K = controlled_from_function(_matrix(d, -0.5), X)
    L = controlled_from_function(_matrix(d, 0.25), X)
    left = leibniz_product(leibniz_product(J, K), L)
    right = leibniz_product(J, leibniz_product(K, L))
    return jet_gap(left, right, _times(X))


def pullback_functoriality(X: RoughPath, tol: float) -> float:
    """``(G o F)^* H`` against ``F^*(G^* H)``."""
    d = X.d
    F, G = _deform(d), _twist(d)
    GF = ComposedJet(G, F)
    Q = _map([f"x{j + 1} + 2" for j in range(d)], d, (1, d))
    direct = controlled_from_function(Q, controlled_from_function(GF, X).lift(tol=tol))
    inner = controlled_from_function(F, X).lift(tol=tol)
    outer = controlled_from_function(G, inner).lift(tol=tol)
    stepwise = controlled_from_function(Q, outer)
    return jet_gap(pullback(GF, direct), pullback(F, pullback(G, stepwise)), _times(X))


def leibniz_rule(X: RoughPath, tol: float) -> float:
    """Jets of ``A(X) B(X)`` against the product of the jets of ``A(X)`` and ``B(X)``."""
    d = X.d
    A, B = _matrix(d, 1.0), _matrix(d, -0.5)
    joint = controlled_from_function(ProductJet(A, B), X)
    split = leibniz_product(controlled_from_function(A, X), controlled_from_function(B, X))
    return jet_gap(joint, split, _times(X))


CORE_CHECKS: list[tuple[str, str, Callable[[RoughPath, float], float]]] = [
    ("change_of_variable", "F(X) - F(X_0) = int DF(X) dX", change_of_variable),
    ("integral_associativity", "int K dI = int (K * I) . H dX", integral_associativity),
    ("pushforward_pullback", "int H d(F_* X) = int F^* H dX", pushforward_pullback),
    ("star_associativity", "(J * K) * H = J * (K * H)", star_associativity),
    ("star_product", "(J . K) * H = (J * H) . (K * H)", star_distributes_over_product),
    ("product_associativity", "(J . K) . L = J . (K . L)", product_associativity),
    ("pullback_functoriality", "(G o F)^* = F^* G^*", pullback_functoriality),
    ("leibniz", "(AB)(X) = A(X) . B(X)", leibniz_rule),
]


def run_suite(suite: str = "core", threshold: float = 1e-6, tol: float = DEFAULT_TOL, seed: int = 0,
              scenarios: list[Scenario] | None = None) -> list[dict]:
    """Run every check on every scenario and return one record per pair."""
    if suite != "core":
        raise ValueError(f"unknown suite {suite!r}")
    scenarios = standard_scenarios(seed=seed) if scenarios is None else scenarios
    records = []
    for scenario in scenarios:
        for name, identity, check in CORE_CHECKS:
            start = time.perf_counter()
            defect = float(check(scenario.driver, tol))
            records.append({"name": name, "identity": identity, "scenario": scenario.name, "defect": defect,
                            "threshold": threshold, "pass": bool(defect < threshold),
                            "seconds": round(time.perf_counter() - start, 3)})
    return records
