"""Controlled paths: integration, lifts, change of controlling path, pushforward and pullback.

A controlled path over a rough path ``X`` on ``R^d`` with values in ``R^e``
stores, at each time, the coefficients ``H^k_gamma`` for words ``gamma``
over ``1..d`` of length ``0..L-1`` (``L = floor(p)`` by default). Batched
jets have shape ``(B, e, D)`` in the flat word layout of
:mod:`roughkit.tensor`.

Matrix-valued paths (integrands) use a row-major ``shape``: an integrand
with values in ``L(R^d, R^w)`` has shape ``(w, d)`` and component
``(k, delta)`` paired with the last letter ``delta`` of an integrand word.
"""

from __future__ import annotations

import itertools
import json
import math
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import tensor as T
from . import words as W
from .jets import (
    ComposedJet,
    DerivativeJet,
    JetFunction,
    ProductJet,
    composition_plan,
    contract,
    identity_jet,
    leibniz_plan,
)
from .roughpath import (
    DEFAULT_MAX_DEPTH,
    DEFAULT_TOL,
    PATH_MAX_DEPTH,
    RoughPath,
    SewingError,
    SewingResult,
    SewnPath,
    _relative_gap,
    dyadic_grid,
    sewing_limit,
)
from .tensor import layout

JetFn = Callable[[np.ndarray], np.ndarray]


class ReferenceMismatchError(ValueError):
    """Raised when an operation combines paths controlled by different rough paths."""


class ControlledPath:
    """Controlled path with batched jet evaluator ``jet_fn(times) -> (B, dim, D)``."""

    def __init__(self, reference: RoughPath, dim: int, jet_fn: JetFn, levels: int | None = None,
                 shape: Sequence[int] | None = None, trace_fn: JetFn | None = None, name: str = ""):
        self.reference = reference
        self.dim = int(dim)
        self.levels = reference.floor_p if levels is None else int(levels)
        if self.levels < 1:
            raise ValueError("a controlled path has at least one level")
        self.shape = (self.dim,) if shape is None else tuple(int(s) for s in shape)
        if int(np.prod(self.shape)) != self.dim:
            raise ValueError("shape does not match the dimension")
        self.layout = layout(reference.d, self.levels - 1)
        self._jet_fn = jet_fn
        self._trace_fn = trace_fn
        self.name = name
        self.function: JetFunction | None = None
        self._memo: dict[float, np.ndarray] = {}
        self._lock = threading.Lock()
        self._lift: SewnPath | None = None

    @property
    def d(self) -> int:
        return self.reference.d

    def jets(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float).reshape(-1)
        out = np.asarray(self._jet_fn(times), dtype=float)
        if out.shape != (times.size, self.dim, self.layout.D):
            raise ValueError(f"jet evaluator returned shape {out.shape}")
        return out

    def jet(self, t: float) -> np.ndarray:
        key = float(t)
        with self._lock:
            hit = self._memo.get(key)
        if hit is None:
            hit = self.jets([key])[0]
            hit.setflags(write=False)
            with self._lock:
                self._memo.setdefault(key, hit)
        return hit

    def trace(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float).reshape(-1)
        if self._trace_fn is not None:
            return np.asarray(self._trace_fn(times), dtype=float).reshape(times.size, self.dim)
        return self.jets(times)[:, :, 0]

    def level(self, t: float, n: int) -> np.ndarray:
        """Coefficient table of level ``n`` at time ``t``, shape (dim, d^n)."""
        return self.jet(t)[:, self.layout.sl(n)]

    def coefficient(self, t: float, word: Sequence[int], component: int = 0) -> float:
        return float(self.jet(t)[component, self.layout.index(tuple(word))])

    def lift(self, tol: float = DEFAULT_TOL, max_depth: int = PATH_MAX_DEPTH) -> SewnPath:
        """The lift of this path (cached, so the returned object is a stable reference)."""
        if self._lift is None:
            self._lift = _make_lift(self, tol, max_depth)
        return self._lift

    def with_levels(self, levels: int) -> "ControlledPath":
        """Same path keeping only the first ``levels`` levels."""
        if levels > self.levels:
            raise ValueError("cannot add levels")
        keep = layout(self.d, levels - 1).D
        return ControlledPath(self.reference, self.dim, lambda t: self.jets(t)[:, :, :keep], levels,
                              self.shape, self._trace_fn, self.name)

    def integrand_coefficients(self, times) -> np.ndarray:
        """Coefficients over words of length ``1..L`` as a flat array (B, w, D), level 0 zero."""
        if len(self.shape) != 2 or self.shape[1] != self.d:
            raise ValueError(f"integrands need shape (w, {self.d}), got {self.shape}")
        w = self.shape[0]
        jets = self.jets(times).reshape(-1, w, self.d, self.layout.D)
        lay = layout(self.d, self.levels)
        out = np.zeros((jets.shape[0], w, lay.D))
        for n in range(self.levels):
            block = jets[..., self.layout.sl(n)]
            out[:, :, lay.sl(n + 1)] = np.transpose(block, (0, 1, 3, 2)).reshape(jets.shape[0], w, -1)
        return out

    def to_json(self, times: Sequence[float]) -> str:
        records = []
        for t, jet in zip(times, self.jets(times)):
            records.append({"t": float(t), "jets": {str(n): jet[:, self.layout.sl(n)].tolist()
                                                    for n in range(self.levels)}})
        return json.dumps(records)


def _require_same_reference(*paths: ControlledPath) -> None:
    tokens = {p.reference.token for p in paths}
    if len(tokens) != 1:
        raise ReferenceMismatchError("paths are controlled by different rough paths")


def controlled_from_function(F: JetFunction, X: RoughPath, levels: int | None = None) -> ControlledPath:
    """Jets ``d_gamma F(X_t)`` for ``|gamma| < levels``."""
    levels = X.floor_p if levels is None else levels
    if F.in_dim != X.d:
        raise ValueError(f"map expects dimension {F.in_dim}, path has {X.d}")
    if F.max_order is not None and F.max_order < levels - 1:
        raise ValueError("insufficient jet order for this rough path")

    def jet_fn(times):
        return F.jet(X.trace(times), levels - 1)

    def trace_fn(times):
        return F.jet(X.trace(times), 0)[:, :, 0]

    path = ControlledPath(X, F.out_size, jet_fn, levels, F.out_shape, trace_fn, name="function")
    path.function = F
    return path


def constant_path(value, X: RoughPath, levels: int | None = None) -> ControlledPath:
    value = np.asarray(value, dtype=float)
    shape = value.shape if value.ndim else (1,)
    flat = value.reshape(-1)
    lay_levels = X.floor_p if levels is None else levels
    D = layout(X.d, lay_levels - 1).D

    def jet_fn(times):
        out = np.zeros((times.size, flat.size, D))
        out[:, :, 0] = flat
        return out

    return ControlledPath(X, flat.size, jet_fn, lay_levels, shape, name="constant")


# controlledness ---------------------------------------------------------------


@dataclass
class ControlledReport:
    slopes: dict[int, float]
    expected: dict[int, float]
    passed: bool
    slack: float
    pairs: int

    def as_dict(self) -> dict:
        return {"slopes": {str(k): v for k, v in self.slopes.items()},
                "expected": {str(k): v for k, v in self.expected.items()},
                "passed": self.passed, "slack": self.slack, "pairs": self.pairs}


def controlled_remainders(H: ControlledPath, lefts, rights) -> dict[int, np.ndarray]:
    """Largest remainder per level for each pair ``(s, t)``."""
    lefts = np.asarray(lefts, dtype=float)
    rights = np.asarray(rights, dtype=float)
    X = H.reference
    L = H.levels
    lay = H.layout
    xlay = layout(X.d, L - 1)
    js = H.jets(lefts)
    jt = H.jets(rights)
    inc = T.flat_truncate(X.pair_increments(lefts, rights), X.layout, xlay)
    out = {}
    for n in range(L):
        worst = np.zeros(lefts.size)
        for beta in W.all_words(X.d, n):
            b = lay.index(beta)
            expansion = np.zeros((lefts.size, H.dim))
            for alpha in W.words_up_to(X.d, L - 1 - n):
                expansion += js[:, :, lay.index(alpha + beta)] * inc[:, xlay.index(alpha)][:, None]
            worst = np.maximum(worst, np.max(np.abs(jt[:, :, b] - expansion), axis=1))
        out[n] = worst
    return out


def check_controlled(H: ControlledPath, grid: Sequence[float] | None = None, slack: float = 0.1,
                     pairs: tuple[Sequence[float], Sequence[float]] | None = None,
                     floor: float = 1e-13) -> ControlledReport:
    """Fit ``log |remainder|`` against ``log omega`` per level.

    Level ``n`` passes when its slope is at least ``(floor(p) - n)/p - slack``.
    Levels whose remainders all sit below ``floor`` pass without a fit.
    """
    if pairs is None:
        if grid is None:
            raise ValueError("give a grid or explicit pairs")
        grid = np.unique(np.asarray(grid, dtype=float))
        idx = list(itertools.combinations(range(grid.size), 2))
        lefts, rights = grid[[i for i, _ in idx]], grid[[j for _, j in idx]]
    else:
        lefts, rights = (np.asarray(a, dtype=float) for a in pairs)
    X = H.reference
    omega = X.control(lefts, rights)
    if lefts.size < 3 or np.ptp(np.log(omega)) < math.log(10.0):
        raise ValueError("degenerate grid: need pairs whose control spans at least a decade")
    rem = controlled_remainders(H, lefts, rights)
    slopes, expected, ok = {}, {}, True
    for n, r in rem.items():
        expected[n] = (X.floor_p - n) / X.p
        keep = r > floor
        if keep.sum() < 3:
            slopes[n] = math.inf
            continue
        fit = stats.linregress(np.log(omega[keep]), np.log(r[keep]))
        slopes[n] = float(fit.slope)
        ok &= slopes[n] >= expected[n] - slack
    return ControlledReport(slopes, expected, bool(ok), slack, int(lefts.size))


# integration ------------------------------------------------------------------


def _integrand_xi(H: ControlledPath):
    X = H.reference
    lay = layout(X.d, H.levels)

    def xi(lefts, rights):
        coeffs = H.integrand_coefficients(lefts)
        inc = T.flat_truncate(X.pair_increments(lefts, rights), X.layout, lay)
        return np.einsum("bwk,bk->bw", coeffs, inc)

    return xi


def rough_integral(H: ControlledPath, s: float, t: float, tol: float = DEFAULT_TOL,
                   max_depth: int = DEFAULT_MAX_DEPTH) -> SewingResult:
    """``int_s^t H dX`` as the sewing limit of ``<H_u, X_uv>``."""
    X = H.reference
    return sewing_limit(_integrand_xi(H), s, t, (X.floor_p + 1) / X.p, tol, max_depth)


class _AdditiveSewing:
    """Cumulative sewing of an additive germ over ``[t0, t1]`` with one global depth."""

    def __init__(self, xi, t0: float, t1: float, tol: float, max_depth: int, min_depth: int = 2):
        self.xi, self.t0, self.t1 = xi, t0, t1
        self.tol, self.max_depth, self.min_depth = tol, max_depth, min_depth
        self._depth: int | None = None
        self.history: list[float] = []
        self._lock = threading.Lock()

    @property
    def depth(self) -> int:
        with self._lock:
            if self._depth is None:
                prev = None
                for depth in range(self.max_depth + 1):
                    grid = dyadic_grid(self.t0, self.t1, depth)
                    running = np.cumsum(self.xi(grid[:-1], grid[1:]), axis=0)
                    if prev is not None:
                        gap = _relative_gap(running[1::2], prev)
                        self.history.append(gap)
                        if gap < self.tol and depth >= self.min_depth:
                            self._depth = depth
                            break
                    prev = running
                else:
                    raise SewingError("integral did not converge", self.max_depth, self.history[-1], self.history)
            return self._depth

    def values(self, times) -> np.ndarray:
        """Integral from ``t0`` to each time."""
        times = np.asarray(times, dtype=float).reshape(-1)
        grid = dyadic_grid(self.t0, self.t1, self.depth)
        merged = np.union1d(grid, np.clip(times, self.t0, self.t1))
        pieces = self.xi(merged[:-1], merged[1:])
        running = np.concatenate([np.zeros((1,) + pieces.shape[1:]), np.cumsum(pieces, axis=0)])
        return running[np.searchsorted(merged, times)]


def integral_path(H: ControlledPath, times, tol: float = DEFAULT_TOL, max_depth: int = PATH_MAX_DEPTH) -> np.ndarray:
    """Values of ``int_{t0}^t H dX`` at ``times``, shape (n, w)."""
    X = H.reference
    sewing = _AdditiveSewing(_integrand_xi(H), X.t0, X.t1, tol, max_depth)
    return sewing.values(times)


def controlled_integral(H: ControlledPath, start=None, tol: float = DEFAULT_TOL,
                        max_depth: int = PATH_MAX_DEPTH) -> ControlledPath:
    """The integral as a controlled path with jets ``(I, H_0, ..., H_{L-2})``."""
    X = H.reference
    w = H.shape[0]
    L = H.levels
    start = np.zeros(w) if start is None else np.asarray(start, dtype=float).reshape(w)
    sewing = _AdditiveSewing(_integrand_xi(H), X.t0, X.t1, tol, max_depth)
    D = layout(X.d, L - 1).D

    def trace_fn(times):
        return start + sewing.values(times)

    def jet_fn(times):
        out = np.zeros((times.size, w, D))
        out[:, :, 0] = trace_fn(times)
        if L > 1:
            out[:, :, 1:] = H.integrand_coefficients(times)[:, :, 1:D]
        return out

    path = ControlledPath(X, w, jet_fn, L, (w,), trace_fn, name="integral")
    path.sewing = sewing
    return path


# lifts ------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _lift_plan(d: int, N: int):
    """Per level ``m >= 2``: terms (driver word index, part indices, multiplicity)."""
    xlay = layout(d, N)
    jlay = layout(d, N - 1)
    plan = {}
    for m in range(2, N + 1):
        terms = []
        for n in range(m, N + 1):
            for gamma in W.all_words(d, n):
                for parts, mult in sorted(W.ordered_unshuffle(gamma, m).items()):
                    terms.append((xlay.index(gamma), tuple(jlay.index(x) for x in parts), mult))
        plan[m] = terms
    return plan


def lift_local_batch(H: ControlledPath, lefts, rights) -> np.ndarray:
    """Local lift on each pair; level 1 is the trace increment."""
    lefts = np.asarray(lefts, dtype=float)
    rights = np.asarray(rights, dtype=float)
    X = H.reference
    N = X.floor_p
    if H.levels < N:
        raise ValueError("lifting needs levels 0..floor(p)-1")
    e = H.dim
    lay = layout(e, N)
    out = lay.unit((lefts.size,))
    out[:, lay.sl(1)] = H.trace(rights) - H.trace(lefts)
    if N >= 2:
        jets = H.jets(lefts)
        inc = T.flat_truncate(X.pair_increments(lefts, rights), X.layout, layout(X.d, N))
        for m, terms in _lift_plan(X.d, N).items():
            acc = np.zeros((lefts.size, e**m))
            for g, parts, mult in terms:
                prod = jets[:, :, parts[0]]
                for part in parts[1:]:
                    prod = (prod[:, :, None] * jets[:, :, part][:, None, :]).reshape(lefts.size, -1)
                acc += (mult * inc[:, g])[:, None] * prod
            out[:, lay.sl(m)] = acc
    return out


def lift_local(H: ControlledPath, s: float, t: float) -> T.TensorSeries:
    return T.from_flat(lift_local_batch(H, [s], [t])[0], H.dim, H.reference.floor_p)


def _make_lift(H: ControlledPath, tol: float, max_depth: int) -> SewnPath:
    X = H.reference
    path = SewnPath(lambda a, b: lift_local_batch(H, a, b), H.dim, X.p, X.floor_p, X.t0, X.t1,
                    H.trace([X.t0])[0], X.control, tol, max_depth, trace_fn=H.trace)
    path.source = H
    return path


def lift(H: ControlledPath) -> SewnPath:
    return H.lift()


def pushforward_rough_path(F: JetFunction, X: RoughPath) -> tuple[SewnPath, ControlledPath]:
    """``F_* X`` together with the controlled path ``F(X)`` it lifts."""
    FX = controlled_from_function(F, X)
    return FX.lift(), FX


# change of controlling path ---------------------------------------------------


def star_change_of_base(K: ControlledPath, H: ControlledPath) -> ControlledPath:
    """``K * H``: re-express ``K`` (controlled by the lift of ``H``) over ``H``'s reference."""
    if K.reference is not H.lift():
        raise ReferenceMismatchError("the left factor must be controlled by the lift of the right factor")
    L = min(K.levels, H.levels)
    d = H.d
    plan = composition_plan(d, L - 1, True)
    klay = layout(H.dim, L - 1)
    D = layout(d, L - 1).D
    kD = klay.D

    def jet_fn(times):
        kj = K.jets(times)[:, :, :kD]
        hj = H.jets(times)[:, :, :D]
        out = np.zeros((times.size, K.dim, D))
        out[:, :, 0] = kj[:, :, 0]
        return contract(kj, hj, plan, klay, out)

    return ControlledPath(H.reference, K.dim, jet_fn, L, K.shape, K.trace, name="star")


def pushforward_controlled(F: JetFunction, H: ControlledPath, form: str = "faa_di_bruno") -> ControlledPath:
    """``F_* H``.

    ``form="faa_di_bruno"`` sums over unordered unshuffles with ``1/m!``;
    ``form="star"`` computes ``F(H) * H`` through ordered unshuffles.
    """
    if form == "star":
        return star_change_of_base(controlled_from_function(F, H.lift()), H)
    if form != "faa_di_bruno":
        raise ValueError(f"unknown form {form!r}")
    if F.in_dim != H.dim:
        raise ValueError("map domain does not match the path's values")
    L = H.levels
    if F.max_order is not None and F.max_order < L - 1:
        raise ValueError("insufficient jet order")
    plan = composition_plan(H.d, L - 1, False)
    flay = layout(F.in_dim, L - 1)

    def jet_fn(times):
        hj = H.jets(times)
        fj = F.jet(hj[:, :, 0], L - 1)
        out = np.zeros((times.size, F.out_size, hj.shape[2]))
        out[:, :, 0] = fj[:, :, 0]
        return contract(fj, hj, plan, flay, out)

    def trace_fn(times):
        return F.jet(H.trace(times), 0)[:, :, 0]

    return ControlledPath(H.reference, F.out_size, jet_fn, L, F.out_shape, trace_fn, name="pushforward")


def leibniz_product(K: ControlledPath, H: ControlledPath) -> ControlledPath:
    """Pointwise composition ``K . H`` of matrix-valued controlled paths."""
    _require_same_reference(K, H)
    from .jets import _as_matrix_shape

    p, q = _as_matrix_shape(K.shape)
    q2, r = _as_matrix_shape(H.shape)
    if q != q2:
        raise ValueError(f"cannot compose shapes {K.shape} and {H.shape}")
    L = min(K.levels, H.levels)
    D = layout(H.d, L - 1).D
    plan = leibniz_plan(H.d, L - 1)

    def jet_fn(times):
        a = K.jets(times)[:, :, :D].reshape(times.size, p, q, D)
        b = H.jets(times)[:, :, :D].reshape(times.size, q, r, D)
        out = np.zeros((times.size, p, r, D))
        for idx, terms in plan:
            for i, j, mult in terms:
                out[..., idx] += mult * np.einsum("bpq,bqr->bpr", a[..., i], b[..., j])
        return out.reshape(times.size, p * r, D)

    return ControlledPath(H.reference, p * r, jet_fn, L, (p, r), name="leibniz")


def pullback(F: JetFunction, H: ControlledPath) -> ControlledPath:
    """``F^* H = (H * F(X)) . DF(X)`` for an integrand ``H`` over ``F_* X``."""
    source = getattr(H.reference, "source", None)
    if source is None or source.function is not F:
        raise ReferenceMismatchError("the integrand must be controlled by the pushforward of the driver through F")
    if F.max_order is not None and F.max_order < source.reference.floor_p:
        raise ValueError("pullback needs jets of order floor(p)")
    X = source.reference
    dF = controlled_from_function(DerivativeJet(F), X)
    return leibniz_product(star_change_of_base(H, source), dF)


def compose_functions(outer: JetFunction, inner: JetFunction) -> ComposedJet:
    return ComposedJet(outer, inner)


def pointwise_product(A: JetFunction, B: JetFunction) -> ProductJet:
    return ProductJet(A, B)


def jet_gap(A: ControlledPath, B: ControlledPath, times) -> float:
    """Sup distance between coefficient tables at matched times."""
    L = min(A.levels, B.levels)
    D = layout(A.d, L - 1).D
    return float(np.max(np.abs(A.jets(times)[:, :, :D] - B.jets(times)[:, :, :D])))


def identity_path(X: RoughPath) -> ControlledPath:
    """``X`` viewed as a controlled path (the identity function of its trace)."""
    return controlled_from_function(identity_jet(X.d), X)
