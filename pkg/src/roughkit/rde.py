"""Rough differential equations ``dY = F(Y) dX``.

A vector field is a jet function ``F: R^e -> L(R^d, R^e)`` with
``out_shape == (e, d)``; column ``gamma`` is the field ``F_gamma``. For a
word ``gamma = (g1, ..., gn)`` the iterated field is
``F_gamma g = F_g1(F_g2(... F_gn g))`` with ``F_k h = dh . F_k``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import sympy as sp

from . import tensor as T
from . import words as W
from .controlled import (
    ControlledPath,
    controlled_from_function,
    integral_path,
    pushforward_controlled,
)
from .jets import (
    ComposedJet,
    ConstantJet,
    DerivativeJet,
    JetFunction,
    LinearJet,
    PolynomialJet,
    PrecomposedLinear,
    ProductJet,
    StackedJet,
    identity_jet,
)
from .roughpath import (
    DEFAULT_TOL,
    PATH_MAX_DEPTH,
    RoughPath,
    SewingError,
    _relative_gap,
    dyadic_grid,
    max_increment_gap,
    write_path_csv,
)
from .tensor import layout

DEFAULT_NORM_GUARD = 1e6


class RdeExplosionError(RuntimeError):
    """The numerical solution left the ball of radius ``norm_guard``.

    This only signals suspected blowup: a finite scheme cannot certify that
    the exact solution leaves every compact set.
    """

    def __init__(self, time: float, norm: float, depth: int, guard: float):
        super().__init__(f"solution norm {norm:.3e} exceeded {guard:.1e} at t={time:.6g} (depth {depth})")
        self.time, self.norm, self.depth, self.guard = time, norm, depth, guard


class VectorFieldJet(JetFunction):
    """A jet function viewed as a field of linear maps ``R^d -> R^e``."""

    def __init__(self, base: JetFunction, d: int | None = None):
        shape = base.out_shape
        if len(shape) == 1 and d is not None and shape[0] == base.in_dim * d:
            shape = (base.in_dim, d)
        if len(shape) != 2 or shape[0] != base.in_dim:
            raise ValueError(f"a vector field on R^{base.in_dim} needs out_shape ({base.in_dim}, d), got {base.out_shape}")
        super().__init__(base.in_dim, shape, base.max_order)
        self.base = base
        self.e, self.d = shape

    def _jet(self, x, order):
        return self.base.jet(x, order)

    def symbolic(self, symbols):
        return self.base.symbolic(symbols)


def as_field(F: JetFunction, d: int | None = None) -> VectorFieldJet:
    return F if isinstance(F, VectorFieldJet) else VectorFieldJet(F, d)


def linear_field(matrices: Sequence) -> VectorFieldJet:
    """``F_gamma(y) = A_gamma y``."""
    mats = [np.atleast_2d(np.asarray(A, dtype=float)) for A in matrices]
    e = mats[0].shape[0]
    big = np.zeros((e * len(mats), e))
    for gamma, A in enumerate(mats):
        # row (k, gamma) of the flattened (e, d) output
        big[gamma :: len(mats), :] = A
    return VectorFieldJet(LinearJet(big, out_shape=(e, len(mats))))


def polynomial_field(components: Sequence[dict], e: int, d: int) -> VectorFieldJet:
    """Polynomial field from ``{exponents: coefficient}`` tables, row-major over (k, gamma)."""
    return VectorFieldJet(PolynomialJet(e, components, (e, d)))


def constant_field(A) -> VectorFieldJet:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return VectorFieldJet(ConstantJet(A, A.shape[0]))


# iterated fields --------------------------------------------------------------


@lru_cache(maxsize=None)
def _apply_plan(e: int, order: int):
    """For ``(F_delta h)_beta = sum h_{beta1 k} F^k_{delta; beta2}``: per beta, index arrays."""
    src = layout(e, order + 1)
    lay = layout(e, order)
    plan = []
    for beta in lay.words():
        hidx, fidx, mult = [], [], []
        for (b1, b2), m in sorted(W.unshuffle(beta, 2).items()):
            hidx.append([src.index(b1 + (k,)) for k in range(1, e + 1)])
            fidx.append(lay.index(b2))
            mult.append(float(m))
        plan.append((lay.index(beta), np.array(hidx), np.array(fidx), np.array(mult)))
    return plan


def _apply_field(fjet: np.ndarray, hjet: np.ndarray, delta: int, order: int) -> np.ndarray:
    """Jet of ``F_delta h`` up to ``order`` from jets of ``h`` (order+1) and ``F`` (at least order).

    ``fjet`` has shape (B, e, d, D_F), ``hjet`` (B, c, D_h).
    """
    e = fjet.shape[1]
    lay = layout(e, order)
    fd = fjet[:, :, delta - 1, :]
    out = np.zeros(hjet.shape[:2] + (lay.D,))
    for idx, hidx, fidx, mult in _apply_plan(e, order):
        # hjet[:, :, hidx] -> (B, c, terms, e); fd[:, :, fidx] -> (B, e, terms)
        out[:, :, idx] = np.einsum("bcte,bet,t->bc", hjet[:, :, hidx], fd[:, :, fidx], mult)
    return out


class IteratedFields:
    """Memoized ``F_gamma g`` jets at a batch of points (recursion on word suffixes)."""

    def __init__(self, F: JetFunction, y, depth: int, g: JetFunction | None = None):
        F = as_field(F)
        self.F = F
        self.y = np.asarray(y, dtype=float).reshape(-1, F.e)
        self.depth = depth
        self.fjet = F.jet(self.y, max(depth - 1, 0)).reshape(self.y.shape[0], F.e, F.d, -1)
        self.g = g
        if g is None:
            base = np.zeros((self.y.shape[0], F.e, layout(F.e, depth).D))
            base[:, :, 0] = self.y
            if depth >= 1:
                base[:, :, 1 : 1 + F.e] = np.eye(F.e)
        else:
            if g.in_dim != F.e:
                raise ValueError("g must be defined on the solution space")
            if g.max_order is not None and g.max_order < depth:
                raise ValueError("insufficient jet depth of g")
            base = g.jet(self.y, depth)
        self._jets: dict[tuple[int, ...], np.ndarray] = {(): base}

    def jet(self, word: tuple[int, ...]) -> np.ndarray:
        word = tuple(word)
        if len(word) > self.depth:
            raise ValueError(f"word {word} is longer than the available depth {self.depth}")
        hit = self._jets.get(word)
        if hit is None:
            inner = self.jet(word[1:])
            order = self.depth - len(word)
            hit = _apply_field(self.fjet[..., : layout(self.F.e, order).D],
                               inner[..., : layout(self.F.e, order + 1).D], word[0], order)
            self._jets[word] = hit
        return hit

    def value(self, word) -> np.ndarray:
        return self.jet(tuple(word))[:, :, 0]


def iterated_field(F: JetFunction, g: JetFunction | None, word: Sequence[int], y, reading: str = "left") -> np.ndarray:
    """``F_word g(y)``; ``g=None`` means the identity.

    ``reading="right"`` first forms the function ``F_{last letter} g`` and then
    applies the remaining letters to it; both readings agree.
    """
    F = as_field(F)
    word = tuple(word)
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    if reading == "left":
        out = IteratedFields(F, y, len(word), g).value(word)
    elif reading == "right":
        if not word:
            out = IteratedFields(F, y, 0, g).value(())
        else:
            inner = ProductJet(DerivativeJet(g if g is not None else identity_jet(F.e)), _column(F, word[-1]))
            out = IteratedFields(F, y, len(word) - 1, inner).value(word[:-1])
    else:
        raise ValueError("reading must be 'left' or 'right'")
    return out[0] if single else out


def _column(F: VectorFieldJet, gamma: int) -> JetFunction:
    sel = np.zeros((F.e, F.e * F.d))
    for k in range(F.e):
        sel[k, k * F.d + gamma - 1] = 1.0
    return ComposedJet(LinearJet(sel), F, out_shape=(F.e, 1))


def iterated_field_expanded(F: JetFunction, g: JetFunction | None, word: Sequence[int], y) -> np.ndarray:
    """``F_word g(y)`` via ordered unshuffles: ``sum d_k g(y) prod_i F_{word_i} 1^{k_i}(y)``."""
    F = as_field(F)
    word = tuple(word)
    y = np.asarray(y, dtype=float).reshape(-1, F.e)
    n = len(word)
    g = g if g is not None else identity_jet(F.e)
    gjet = g.jet(y, n)
    glay = layout(F.e, n)
    ones = IteratedFields(F, y, n)
    if n == 0:
        return gjet[:, :, 0]
    total = np.zeros((y.shape[0], g.out_size))
    for m in range(1, n + 1):
        for parts, mult in W.ordered_unshuffle(word, m).items():
            prod = np.ones((y.shape[0], 1))
            for part in parts:
                prod = (prod[:, :, None] * ones.value(part)[:, None, :]).reshape(y.shape[0], -1)
            total += mult * np.einsum("bck,bk->bc", gjet[:, :, glay.sl(m)], prod)
    return total


def euler_coefficients(F: JetFunction, y, N: int) -> np.ndarray:
    """``F_gamma 1(y)`` for all words ``|gamma| <= N`` in flat layout, shape (B, e, D)."""
    F = as_field(F)
    y = np.asarray(y, dtype=float).reshape(-1, F.e)
    fields = IteratedFields(F, y, N)
    lay = layout(F.d, N)
    out = np.zeros((y.shape[0], F.e, lay.D))
    for word in lay.words()[1:]:
        out[:, :, lay.index(word)] = fields.value(word)
    return out


def _compile_euler(F: VectorFieldJet, N: int):
    """Single-point Euler coefficients from a symbolic form of ``F``, or ``None`` if unavailable."""
    try:
        ys = sp.symbols(f"y1:{F.e + 1}")
        flat = F.symbolic(ys)
    except NotImplementedError:
        return None
    field_cols = [[flat[k * F.d + g] for k in range(F.e)] for g in range(F.d)]
    lay = layout(F.d, N)
    cache: dict[tuple[int, ...], list] = {(): list(ys)}

    def iterate(word):
        if word not in cache:
            inner = iterate(word[1:])
            col = field_cols[word[0] - 1]
            cache[word] = [sum((sp.diff(h, ys[k]) * col[k] for k in range(F.e)), sp.Integer(0)) for h in inner]
        return cache[word]

    exprs = [iterate(w) for w in lay.words()[1:]]
    fn = sp.lambdify(ys, exprs, modules="numpy", cse=True)
    D = lay.D

    def coefficients(y):
        out = np.zeros((F.e, D))
        out[:, 1:] = np.asarray(fn(*np.asarray(y, dtype=float).tolist()), dtype=float).T
        return out

    return coefficients


def davie_step(F: JetFunction, X: RoughPath, y, s: float, t: float) -> np.ndarray:
    """Truncated Euler increment ``sum_{|gamma| <= floor(p)} F_gamma 1(y) X^gamma_st``."""
    N = X.floor_p
    inc = T.flat_truncate(X.pair_increments([s], [t]), X.layout, layout(X.d, N))[0]
    return euler_coefficients(F, y, N)[0] @ inc


# solver -----------------------------------------------------------------------


@dataclass
class RdeSolution:
    F: VectorFieldJet
    X: RoughPath
    y0: np.ndarray
    grid: np.ndarray
    values: np.ndarray
    depth: int
    history: list[float] = field(default_factory=list)

    @property
    def e(self) -> int:
        return self.F.e

    def trace(self, times) -> np.ndarray:
        """Solution at arbitrary times: a Davie step from the grid point on the left."""
        times = np.asarray(times, dtype=float).reshape(-1)
        idx = np.clip(np.searchsorted(self.grid, times, side="right") - 1, 0, self.grid.size - 1)
        base = self.values[idx]
        on_grid = self.grid[idx] == times
        out = base.copy()
        off = ~on_grid
        if off.any():
            N = self.X.floor_p
            inc = T.flat_truncate(self.X.pair_increments(self.grid[idx[off]], times[off]), self.X.layout,
                                  layout(self.X.d, N))
            coef = euler_coefficients(self.F, base[off], N)
            out[off] = base[off] + np.einsum("bek,bk->be", coef, inc)
        return out

    def jets(self, times) -> np.ndarray:
        """``(Y, F1(Y), ..., F^{L-1}1(Y))`` at ``times``."""
        N = self.X.floor_p
        y = self.trace(times)
        lay = layout(self.X.d, N - 1)
        out = np.zeros((y.shape[0], self.e, lay.D))
        out[:, :, 0] = y
        if N > 1:
            out[:, :, 1:] = euler_coefficients(self.F, y, N - 1)[:, :, 1:]
        return out

    def controlled(self) -> ControlledPath:
        if not hasattr(self, "_controlled"):
            self._controlled = ControlledPath(self.X, self.e, self.jets, self.X.floor_p, (self.e,),
                                              self.trace, name="rde solution")
        return self._controlled

    def lift(self):
        return self.controlled().lift()

    def diagnostics(self) -> dict:
        return {"depth": self.depth, "steps": int(self.grid.size - 1), "refinement_gaps": list(self.history)}

    def to_csv(self) -> str:
        return write_path_csv(self.grid, self.values)

    def jets_json(self, times) -> str:
        return self.controlled().to_json(times)


def _compiled_euler(F: VectorFieldJet, N: int):
    cache = F.__dict__.setdefault("_euler_cache", {})
    if N not in cache:
        cache[N] = _compile_euler(F, N)
    return cache[N]


def _run_scheme(F: VectorFieldJet, incs: np.ndarray, grid: np.ndarray, y0: np.ndarray, N: int,
                guard: float, depth: int) -> np.ndarray:
    values = np.empty((grid.size, F.e))
    values[0] = y0
    y = y0.copy()
    compiled = _compiled_euler(F, N)
    for i in range(incs.shape[0]):
        coef = compiled(y) if compiled is not None else euler_coefficients(F, y, N)[0]
        y = y + coef @ incs[i]
        norm = float(np.max(np.abs(y)))
        if not np.isfinite(norm) or norm > guard:
            raise RdeExplosionError(float(grid[i + 1]), norm, depth, guard)
        values[i + 1] = y
    return values


def solve(F: JetFunction, X: RoughPath, y0, tol: float = DEFAULT_TOL, max_depth: int = PATH_MAX_DEPTH,
          norm_guard: float = DEFAULT_NORM_GUARD, min_depth: int = 0) -> RdeSolution:
    """Euler scheme on globally refined dyadic partitions until refinements agree within ``tol``.

    The gap is the sup over the coarse grid, relative to ``max(1, |Y|)``.
    When a refinement changes nothing the coarser solution is returned.
    """
    F = as_field(F, X.d)
    if F.d != X.d:
        raise ValueError(f"field expects a driver in R^{F.d}, got R^{X.d}")
    y0 = np.asarray(y0, dtype=float).reshape(F.e)
    N = X.floor_p
    if F.max_order is not None and F.max_order < N - 1:
        raise ValueError("field jets are not deep enough for this rough path")
    lay = layout(X.d, N)
    history: list[float] = []
    prev = None
    for depth in range(0, max_depth + 1):
        grid = dyadic_grid(X.t0, X.t1, depth)
        incs = T.flat_truncate(X.increments(grid), X.layout, lay)
        values = _run_scheme(F, incs, grid, y0, N, norm_guard, depth)
        if prev is not None:
            gap = _relative_gap(values[::2], prev[1])
            history.append(gap)
            if gap == 0.0:
                return RdeSolution(F, X, y0, prev[0], prev[1], depth - 1, history)
            if gap < tol and depth >= min_depth:
                return RdeSolution(F, X, y0, grid, values, depth, history)
        prev = (grid, values)
    raise SewingError("Euler scheme did not settle", max_depth, history[-1] if history else float("nan"), history)


def gubinelli_defect(sol: RdeSolution, times, tol: float = DEFAULT_TOL) -> float:
    """Sup of ``|Y_t - y0 - int_0^t F_* Ybar dX|`` over ``times``."""
    Ybar = sol.controlled()
    integrand = pushforward_controlled(sol.F, Ybar)
    integral = integral_path(integrand, times, tol=tol)
    return float(np.max(np.abs(sol.trace(times) - sol.y0 - integral)))


def davie_remainders(sol: RdeSolution, g: JetFunction, lefts, rights) -> np.ndarray:
    """``|g(Y)_st - sum_{|gamma| <= floor(p)} F_gamma g(Y_s) X^gamma_st|`` per pair."""
    X = sol.X
    N = X.floor_p
    lefts = np.asarray(lefts, dtype=float)
    rights = np.asarray(rights, dtype=float)
    ys, yt = sol.trace(lefts), sol.trace(rights)
    fields = IteratedFields(sol.F, ys, N, g)
    lay = layout(X.d, N)
    inc = T.flat_truncate(X.pair_increments(lefts, rights), X.layout, lay)
    approx = np.zeros((lefts.size, g.out_size))
    for word in lay.words()[1:]:
        approx += fields.value(word) * inc[:, lay.index(word)][:, None]
    return np.max(np.abs(g(yt) - g(ys) - approx), axis=1)


# doubling and change of variable ---------------------------------------------


def doubled_system(F_joint: JetFunction, e: int, d: int) -> VectorFieldJet:
    """Autonomous field on ``(x, y)`` for ``dY = F(Y, X) dX``.

    ``F_joint`` takes ``(y, x)`` in ``R^{e+d}`` and has ``out_shape (e, d)``.
    The returned field is ``(identity; F(y, x))`` on the state ``(x, y)``.
    """
    if F_joint.in_dim != e + d or F_joint.out_size != e * d:
        raise ValueError("joint field must map R^(e+d) to L(R^d, R^e)")
    perm = np.zeros((e + d, e + d))
    perm[:e, d:] = np.eye(e)
    perm[e:, :d] = np.eye(d)
    moved = PrecomposedLinear(F_joint, perm)
    top = ConstantJet(np.eye(d), e + d)
    return VectorFieldJet(StackedJet([top, moved], out_shape=(d + e, d)))


def solve_doubled(F_joint: JetFunction, X: RoughPath, y0, **kwargs) -> RdeSolution:
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    G = doubled_system(F_joint, y0.size, X.d)
    return solve(G, X, np.concatenate([X.trace([X.t0])[0], y0]), **kwargs)


def transported_field(F: JetFunction, g: JetFunction, g_inverse: JetFunction) -> VectorFieldJet:
    """``F_g(z) = Dg(g^{-1} z) F(g^{-1} z)``."""
    F = as_field(F)
    jac = ComposedJet(DerivativeJet(g), g_inverse)
    moved = ComposedJet(F, g_inverse)
    return VectorFieldJet(ProductJet(jac, moved))


def verify_change_of_variable(F: JetFunction, X: RoughPath, y0, g: JetFunction, g_inverse: JetFunction | None,
                              grid: Sequence[float] | None = None, tol: float = DEFAULT_TOL) -> dict:
    """Compare ``g_* Y`` with the lifted solution of ``dZ = F_g(Z) dX``."""
    if g_inverse is None:
        raise ValueError("the change of variable needs the inverse jet")
    F = as_field(F, X.d)
    Y = solve(F, X, y0, tol=tol)
    Ylift = Y.lift()
    pushed = controlled_from_function(g, Ylift).lift()
    Z = solve(transported_field(F, g, g_inverse), X, g(np.asarray(y0, dtype=float)), tol=tol)
    Zlift = Z.lift()
    grid = dyadic_grid(X.t0, X.t1, 4) if grid is None else np.asarray(grid, dtype=float)
    lefts = np.concatenate([grid[:-1], np.full(grid.size - 1, grid[0])])
    rights = np.concatenate([grid[1:], grid[1:]])
    defect = max_increment_gap(pushed, Zlift, lefts, rights, X.floor_p)
    trace_gap = float(np.max(np.abs(g(Y.trace(grid)) - Z.trace(grid))))
    return {"defect": defect, "trace_defect": trace_gap, "depth_y": Y.depth, "depth_z": Z.depth}


def load_scenario(text: str) -> dict:
    """Parse a scenario JSON document (driver, field, y0, p, tol)."""
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"scenario is not valid JSON: {exc}") from None
    for key in ("driver", "field", "y0"):
        if key not in spec:
            raise ValueError(f"scenario is missing {key!r}")
    return spec
