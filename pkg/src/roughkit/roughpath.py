"""Weakly geometric rough paths, axiom checks, sewing and Lyons extension.

Rough paths are evaluator-backed: they answer increment queries for
arbitrary pairs of times rather than storing a grid. Internally every
increment is a flat float vector (see :class:`roughkit.tensor.Layout`), so
batches of increments are plain ``(B, D)`` arrays.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import threading
import uuid
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from . import tensor as T
from .tensor import Layout, TensorSeries, layout

DEFAULT_TOL = 1e-8
DEFAULT_MAX_DEPTH = 14
# global sewing of whole paths is vectorized, so it can afford a deeper budget
PATH_MAX_DEPTH = 18


class SewingError(RuntimeError):
    """Raised when a dyadic limit does not settle within the depth budget."""

    def __init__(self, message: str, depth: int, last_increment: float, history: list[float]):
        super().__init__(f"{message} (depth {depth}, last increment {last_increment:.3e})")
        self.depth = depth
        self.last_increment = last_increment
        self.history = history


class Control:
    """The control ``omega(s, t) = scale * (t - s)``."""

    def __init__(self, scale: float = 1.0):
        if scale <= 0:
            raise ValueError("control scale must be positive")
        self.scale = float(scale)

    def __call__(self, s, t):
        return self.scale * (np.asarray(t, dtype=float) - np.asarray(s, dtype=float))

    def superadditivity_defect(self, grid: Sequence[float]) -> float:
        grid = np.sort(np.asarray(grid, dtype=float))
        worst = 0.0
        for s, u, t in itertools.combinations(grid, 3):
            worst = max(worst, float(self(s, u) + self(u, t) - self(s, t)))
        return worst


def dyadic_grid(s: float, t: float, depth: int, base: int = 2) -> np.ndarray:
    return np.linspace(s, t, base**depth + 1)


def _merge_times(grid: np.ndarray, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Union of two sorted time arrays plus the positions of ``times`` in it."""
    merged = np.union1d(grid, times)
    return merged, np.searchsorted(merged, times)


class RoughPath:
    """A ``p``-rough path over ``R^d`` stored up to ``level >= floor(p)``.

    Subclasses implement :meth:`_pair_increments`. Single increments are
    memoized under a lock, so instances can be shared between threads.
    """

    def __init__(self, d: int, p: float, level: int | None = None, t0: float = 0.0, t1: float = 1.0,
                 start: Sequence[float] | None = None, control: Control | None = None):
        if not 1.0 <= p < 4.0:
            raise ValueError(f"p must lie in [1, 4), got {p}")
        self.d = int(d)
        self.p = float(p)
        self.floor_p = int(math.floor(p))
        self.level = int(level) if level is not None else self.floor_p
        if self.level < self.floor_p:
            raise ValueError("stored level must be at least floor(p)")
        if not t1 > t0:
            raise ValueError("time interval must have positive length")
        self.t0, self.t1 = float(t0), float(t1)
        self.start = np.zeros(self.d) if start is None else np.asarray(start, dtype=float).reshape(self.d)
        self.control = control or Control()
        self.layout: Layout = layout(self.d, self.level)
        self.token = uuid.uuid4().hex
        self._memo: dict[tuple[float, float], np.ndarray] = {}
        self._lock = threading.Lock()

    # subclasses --------------------------------------------------------------
    def _pair_increments(self, lefts: np.ndarray, rights: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # queries -----------------------------------------------------------------
    def _check_times(self, times: np.ndarray) -> None:
        span = self.t1 - self.t0
        if times.size and (times.min() < self.t0 - 1e-12 * span or times.max() > self.t1 + 1e-12 * span):
            raise ValueError(f"times outside [{self.t0}, {self.t1}]")

    def pair_increments(self, lefts, rights) -> np.ndarray:
        lefts = np.asarray(lefts, dtype=float).reshape(-1)
        rights = np.asarray(rights, dtype=float).reshape(-1)
        if np.any(rights < lefts):
            raise ValueError("increments need s <= t")
        self._check_times(lefts)
        self._check_times(rights)
        if lefts.size == 0:
            return np.zeros((0, self.layout.D))
        return self._pair_increments(lefts, rights)

    def increments(self, times) -> np.ndarray:
        """Increments over consecutive intervals of ``times``, shape (n-1, D)."""
        times = np.asarray(times, dtype=float)
        return self.pair_increments(times[:-1], times[1:])

    def increment(self, s: float, t: float) -> np.ndarray:
        key = (float(s), float(t))
        with self._lock:
            hit = self._memo.get(key)
        if hit is None:
            hit = self.pair_increments([s], [t])[0]
            hit.setflags(write=False)
            with self._lock:
                self._memo.setdefault(key, hit)
        return hit

    def __call__(self, s: float, t: float) -> TensorSeries:
        return T.from_flat(self.increment(s, t), self.d, self.level)

    def trace(self, times) -> np.ndarray:
        """Positions ``start + X^1_{t0,t}``, shape (n, d)."""
        times = np.asarray(times, dtype=float).reshape(-1)
        order = np.argsort(times)
        sorted_t = times[order]
        grid = np.concatenate([[self.t0], sorted_t])
        inc = self.increments(grid)[:, 1 : 1 + self.d]
        pos = self.start + np.cumsum(inc, axis=0)
        out = np.empty_like(pos)
        out[order] = pos
        return out

    def truncated(self, level: int) -> "RoughPath":
        return TruncatedPath(self, level)

    def restrict(self, a: float, b: float) -> "RoughPath":
        """The same rough path viewed on ``[a, b]``."""
        return RestrictedPath(self, a, b)

    def to_json(self, grid: Sequence[float]) -> str:
        """Dump increments on all pairs of ``grid`` as a JSON array of records."""
        grid = [float(x) for x in grid]
        pairs = [(s, t) for s, t in itertools.combinations(grid, 2)]
        incs = self.pair_increments([s for s, _ in pairs], [t for _, t in pairs])
        records = [{"s": s, "t": t, "tensor": T.from_flat(v, self.d, self.level).to_json_obj()}
                   for (s, t), v in zip(pairs, incs)]
        return json.dumps(records)


class TruncatedPath(RoughPath):
    def __init__(self, base: RoughPath, level: int):
        super().__init__(base.d, base.p, level, base.t0, base.t1, base.start, base.control)
        if level > base.level:
            raise ValueError("truncation cannot raise the level; use lyons_extend")
        self.base = base

    def _pair_increments(self, lefts, rights):
        return T.flat_truncate(self.base.pair_increments(lefts, rights), self.base.layout, self.layout)


class RestrictedPath(RoughPath):
    def __init__(self, base: RoughPath, a: float, b: float):
        if a < base.t0 or b > base.t1:
            raise ValueError("restriction must lie inside the base interval")
        super().__init__(base.d, base.p, base.level, a, b, base.trace([a])[0], base.control)
        self.base = base

    def _pair_increments(self, lefts, rights):
        return self.base.pair_increments(lefts, rights)

    def trace(self, times):
        times = np.asarray(times, dtype=float).reshape(-1)
        self._check_times(times)
        return self.base.trace(times)


class PolylinePath(RoughPath):
    """Exact signature of the piecewise linear interpolation of samples."""

    def __init__(self, times: Sequence[float], points, level: int, p: float = 1.0, control: Control | None = None):
        times = np.asarray(times, dtype=float).reshape(-1)
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if times.size < 2 or points.shape[0] != times.size:
            raise ValueError("need at least two samples with matching times")
        if np.any(np.diff(times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if level < 1:
            raise ValueError("level must be at least 1")
        super().__init__(points.shape[1], p, max(level, math.floor(p)), times[0], times[-1], points[0], control)
        self.times = times
        self.points = points
        self._slopes = np.diff(points, axis=0) / np.diff(times)[:, None]

    def trace(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float).reshape(-1)
        self._check_times(times)
        return np.stack([np.interp(times, self.times, self.points[:, i]) for i in range(self.d)], axis=1)

    def _pair_increments(self, lefts, rights):
        # split every [s, t] at the sample times it contains; each piece is a
        # straight segment whose signature is an exponential
        counts = np.searchsorted(self.times, rights, side="left") - np.searchsorted(self.times, lefts, side="right")
        counts = np.maximum(counts, 0)
        n = lefts.size
        piece_group = np.repeat(np.arange(n), counts + 1)
        inner_start = np.searchsorted(self.times, lefts, side="right")
        offsets = np.arange(piece_group.size) - np.repeat(np.cumsum(counts + 1) - (counts + 1), counts + 1)
        # breakpoints: left end, then interior sample times, then right end
        cuts_hi = np.where(offsets < np.repeat(counts, counts + 1),
                           self.times[np.minimum(np.repeat(inner_start, counts + 1) + offsets, self.times.size - 1)],
                           np.repeat(rights, counts + 1))
        cuts_lo = np.where(offsets == 0, np.repeat(lefts, counts + 1),
                           self.times[np.minimum(np.repeat(inner_start, counts + 1) + offsets - 1, self.times.size - 1)])
        mid = 0.5 * (cuts_lo + cuts_hi)
        seg = np.clip(np.searchsorted(self.times, mid, side="right") - 1, 0, self._slopes.shape[0] - 1)
        delta = self._slopes[seg] * (cuts_hi - cuts_lo)[:, None]
        pieces = T.flat_exp_linear(delta, self.layout)
        return T.flat_group_products(pieces, piece_group, n, self.layout)


def pwl_signature(samples, level: int, p: float = 1.0, control: Control | None = None) -> PolylinePath:
    """Signature of the polyline through ``samples``.

    ``samples`` is either a sequence of ``(t, point)`` pairs or a 2-d array
    whose first column holds the times.
    """
    if isinstance(samples, np.ndarray) and samples.ndim == 2:
        times, points = samples[:, 0], samples[:, 1:]
    else:
        samples = list(samples)
        times = np.array([float(s[0]) for s in samples])
        points = np.array([np.atleast_1d(np.asarray(s[1], dtype=float)) for s in samples])
    return PolylinePath(times, points, level, p, control)


class PureAreaPath(RoughPath):
    """Constant trace with area ``(t - s) * a``."""

    def __init__(self, area, p: float, t0: float = 0.0, t1: float = 1.0, start=None, control=None):
        area = np.asarray(area, dtype=float)
        if area.ndim != 2 or area.shape[0] != area.shape[1]:
            raise ValueError("area must be a square matrix")
        if not np.allclose(area, -area.T, atol=0.0, rtol=0.0):
            raise ValueError("area must be antisymmetric")
        if not 2.0 <= p < 3.0 and np.any(area):
            raise ValueError("a nonzero pure area needs p in [2, 3)")
        super().__init__(area.shape[0], p, 2, t0, t1, start, control)
        self.area = area

    def _pair_increments(self, lefts, rights):
        out = self.layout.unit((lefts.size,))
        out[:, self.layout.sl(2)] = (rights - lefts)[:, None] * self.area.reshape(-1)[None, :]
        return out

    def trace(self, times):
        times = np.asarray(times, dtype=float).reshape(-1)
        return np.repeat(self.start[None, :], times.size, axis=0)


def pure_area_path(area, p: float = 2.5, **kwargs) -> PureAreaPath:
    return PureAreaPath(area, p, **kwargs)


class FunctionalPath(RoughPath):
    """Rough path (or almost rough path) given by a batch evaluator.

    ``evaluator(lefts, rights)`` returns flat increments of shape (B, D).
    """

    def __init__(self, evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray], d: int, p: float,
                 level: int | None = None, t0: float = 0.0, t1: float = 1.0, start=None, control=None,
                 trace_fn: Callable[[np.ndarray], np.ndarray] | None = None):
        super().__init__(d, p, level, t0, t1, start, control)
        self._evaluator = evaluator
        self._trace_fn = trace_fn

    def _pair_increments(self, lefts, rights):
        return np.asarray(self._evaluator(lefts, rights), dtype=float)

    def trace(self, times):
        if self._trace_fn is None:
            return super().trace(times)
        times = np.asarray(times, dtype=float).reshape(-1)
        return np.asarray(self._trace_fn(times), dtype=float).reshape(times.size, self.d)


# sewing -----------------------------------------------------------------------


@dataclass
class SewingResult:
    value: np.ndarray
    increment: float
    depth: int
    history: list[float] = field(default_factory=list)


def _relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    return float(np.max(np.abs(a - b))) / scale if a.size else 0.0


def sewing_limit(xi: Callable[[np.ndarray, np.ndarray], np.ndarray], s: float, t: float, theta: float,
                 tol: float = DEFAULT_TOL, max_depth: int = DEFAULT_MAX_DEPTH, min_depth: int = 0,
                 base: int = 2) -> SewingResult:
    """Limit of ``sum xi(u, v)`` over refining uniform partitions of ``[s, t]``.

    ``xi`` takes arrays of left and right endpoints and returns one value per
    interval. ``base`` sets the refinement factor (2 gives dyadic partitions).
    The returned ``increment`` is the last gap between successive depths,
    measured relative to ``max(1, |value|)``.
    """
    if theta <= 1:
        raise ValueError("sewing needs a defect exponent theta > 1")
    history: list[float] = []
    prev = None
    value = None
    for depth in range(0, max_depth + 1):
        grid = dyadic_grid(s, t, depth, base)
        value = np.sum(np.asarray(xi(grid[:-1], grid[1:]), dtype=float), axis=0)
        if prev is not None:
            gap = _relative_gap(value, prev)
            history.append(gap)
            if gap < tol and depth >= min_depth:
                return SewingResult(value, gap, depth, history)
        elif depth >= min_depth and _is_additive_at_depth0(xi, s, t, value):
            return SewingResult(value, 0.0, 0, history)
        prev = value
    raise SewingError("sewing did not converge", max_depth, history[-1] if history else float("nan"), history)


def _is_additive_at_depth0(xi, s, t, value) -> bool:
    # cheap shortcut for exactly additive functionals: compare with one split
    grid = np.array([s, 0.5 * (s + t), t])
    split = np.sum(np.asarray(xi(grid[:-1], grid[1:]), dtype=float), axis=0)
    return bool(np.array_equal(split, value))


def multiplicative_sewing_limit(local: Callable[[np.ndarray, np.ndarray], np.ndarray], s: float, t: float,
                                lay: Layout, tol: float = DEFAULT_TOL, max_depth: int = DEFAULT_MAX_DEPTH,
                                min_depth: int = 0) -> SewingResult:
    """Limit of ordered products of ``local(u, v)`` over dyadic partitions."""
    history: list[float] = []
    prev = None
    for depth in range(0, max_depth + 1):
        grid = dyadic_grid(s, t, depth)
        pieces = np.asarray(local(grid[:-1], grid[1:]), dtype=float)
        value = T.flat_group_products(pieces, np.zeros(pieces.shape[0], dtype=int), 1, lay)[0]
        if prev is not None:
            gap = _relative_gap(value, prev)
            history.append(gap)
            if gap < tol and depth >= min_depth:
                return SewingResult(value, gap, depth, history)
        prev = value
    raise SewingError("multiplicative sewing did not converge", max_depth, history[-1], history)


class SewnPath(RoughPath):
    """Rough path obtained as the multiplicative sewing of a local functional.

    One global dyadic depth is selected lazily: the depth at which running
    products along the dyadic grid stop moving (relative gap < ``tol``).
    Increments for arbitrary pairs then multiply the local functional over
    the pair's endpoints merged with that grid.
    """

    def __init__(self, local: Callable[[np.ndarray, np.ndarray], np.ndarray], d: int, p: float, level: int,
                 t0: float, t1: float, start=None, control=None, tol: float = DEFAULT_TOL,
                 max_depth: int = PATH_MAX_DEPTH, min_depth: int = 2,
                 trace_fn: Callable[[np.ndarray], np.ndarray] | None = None):
        super().__init__(d, p, level, t0, t1, start, control)
        self._local = local
        self.tol, self.max_depth, self.min_depth = tol, max_depth, min_depth
        self._trace_fn = trace_fn
        self._depth: int | None = None
        self.history: list[float] = []
        self._depth_lock = threading.Lock()

    @property
    def depth(self) -> int:
        with self._depth_lock:
            if self._depth is None:
                self._depth = self._select_depth()
            return self._depth

    def _select_depth(self) -> int:
        prev = None
        for depth in range(0, self.max_depth + 1):
            grid = dyadic_grid(self.t0, self.t1, depth)
            running = T.flat_prefix_products(np.asarray(self._local(grid[:-1], grid[1:]), dtype=float), self.layout)
            if prev is not None:
                gap = _relative_gap(running[1::2], prev)
                self.history.append(gap)
                if gap < self.tol and depth >= self.min_depth:
                    return depth
            prev = running
        raise SewingError("lift did not converge", self.max_depth, self.history[-1], self.history)

    def _pair_increments(self, lefts, rights):
        grid = dyadic_grid(self.t0, self.t1, self.depth)
        # every pair is cut at the grid points strictly inside it
        lo = np.searchsorted(grid, lefts, side="right")
        hi = np.searchsorted(grid, rights, side="left")
        inner = np.maximum(hi - lo, 0)
        n = lefts.size
        group = np.repeat(np.arange(n), inner + 1)
        pos = np.arange(group.size) - np.repeat(np.cumsum(inner + 1) - (inner + 1), inner + 1)
        rep_lo = np.repeat(lo, inner + 1)
        rep_inner = np.repeat(inner, inner + 1)
        a = np.where(pos == 0, np.repeat(lefts, inner + 1), grid[np.minimum(rep_lo + pos - 1, grid.size - 1)])
        b = np.where(pos == rep_inner, np.repeat(rights, inner + 1), grid[np.minimum(rep_lo + pos, grid.size - 1)])
        pieces = np.asarray(self._local(a, b), dtype=float)
        return T.flat_group_products(pieces, group, n, self.layout)

    def trace(self, times):
        if self._trace_fn is None:
            return super().trace(times)
        times = np.asarray(times, dtype=float).reshape(-1)
        return np.asarray(self._trace_fn(times), dtype=float).reshape(times.size, self.d)


def lyons_extend(X: RoughPath, target_level: int, tol: float = DEFAULT_TOL,
                 max_depth: int = PATH_MAX_DEPTH) -> SewnPath:
    """Extend ``X`` to ``target_level`` by multiplicative sewing.

    The local functional is ``exp(log X_uv)`` computed at the target level
    from the levels up to ``floor(p)``; it agrees with ``X`` on those levels.
    """
    if target_level <= X.floor_p:
        raise ValueError("target level must exceed floor(p)")
    base = layout(X.d, X.floor_p)
    dst = layout(X.d, target_level)

    def local(lefts, rights):
        inc = T.flat_truncate(X.pair_increments(lefts, rights), X.layout, base)
        return T.flat_exp(T.flat_truncate(T.flat_log(inc, base), base, dst), dst)

    return SewnPath(local, X.d, X.p, target_level, X.t0, X.t1, X.start, X.control, tol, max_depth,
                    trace_fn=X.trace)


def complete_almost(almost: RoughPath, geometrize: bool = False, tol: float = DEFAULT_TOL,
                    max_depth: int = PATH_MAX_DEPTH, theta: float | None = None) -> SewnPath:
    """Unique rough path close to an almost multiplicative, almost geometric functional.

    ``theta`` is the defect exponent ``(floor(p) + 1) / p`` unless given.
    With ``geometrize`` each local increment is first replaced by the
    group-like element with the same Lyndon coordinates.
    """
    theta = (almost.floor_p + 1) / almost.p if theta is None else theta
    if theta <= 1:
        raise ValueError(f"defect exponent {theta:.3f} must exceed 1")
    lay = layout(almost.d, almost.floor_p)

    def local(lefts, rights):
        inc = T.flat_truncate(almost.pair_increments(lefts, rights), almost.layout, lay)
        return T.flat_geometrize(inc, lay) if geometrize else inc

    return SewnPath(local, almost.d, almost.p, almost.floor_p, almost.t0, almost.t1, almost.start,
                    almost.control, tol, max_depth)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def pair_noise(lefts, rights, size: int, seed: int = 0) -> np.ndarray:
    """Uniform [-1, 1] noise of shape (B, size) that depends only on ``(s, t, seed)``."""
    s = np.ascontiguousarray(lefts, dtype=np.float64).view(np.uint64)
    t = np.ascontiguousarray(rights, dtype=np.float64).view(np.uint64)
    with np.errstate(over="ignore"):
        key = _splitmix64(_splitmix64(s ^ np.uint64(seed)) ^ t)
        counters = key[:, None] + np.arange(size, dtype=np.uint64)[None, :]
        bits = _splitmix64(counters) >> np.uint64(11)
    return bits.astype(float) * (2.0 / 2.0**53) - 1.0


def perturbed_path(X: RoughPath, amplitude: float, seed: int = 0, exponent: float | None = None) -> FunctionalPath:
    """``X`` plus ``amplitude * omega^exponent * noise`` on levels ``1..floor(p)``.

    The noise is uniform in [-1, 1] and a hash of the pair ``(s, t)``, so
    repeated queries agree.
    """
    exponent = (X.floor_p + 1) / X.p if exponent is None else exponent
    lay = layout(X.d, X.floor_p)

    def evaluator(lefts, rights):
        base = T.flat_truncate(X.pair_increments(lefts, rights), X.layout, lay)
        size = amplitude * X.control(lefts, rights) ** exponent
        bumps = pair_noise(lefts, rights, lay.D, seed)
        bumps[:, 0] = 0.0
        return base + size[:, None] * bumps

    return FunctionalPath(evaluator, X.d, X.p, X.floor_p, X.t0, X.t1, X.start, X.control, trace_fn=X.trace)


# axioms -----------------------------------------------------------------------


@dataclass
class AxiomReport:
    mult_defect: float
    shuffle_defect: float
    regularity_constant: float
    regularity_fit: dict[int, tuple[float, float]]
    pairs: int

    def passed(self, tol: float) -> bool:
        return self.mult_defect <= tol and self.shuffle_defect <= tol and math.isfinite(self.regularity_constant)

    def as_dict(self) -> dict:
        return {
            "mult_defect": self.mult_defect,
            "shuffle_defect": self.shuffle_defect,
            "regularity_constant": self.regularity_constant,
            "regularity_fit": {str(k): {"slope": v[0], "constant": v[1]} for k, v in self.regularity_fit.items()},
            "pairs": self.pairs,
        }


def _shuffle_defects(incs: np.ndarray, lay: Layout) -> np.ndarray:
    """Largest shuffle-identity violation per increment, all word pairs up to the level."""
    worst = np.zeros(incs.shape[0])
    worst = np.maximum(worst, np.abs(incs[:, 0] - 1.0))
    for p_len in range(1, lay.N):
        for q_len in range(1, lay.N - p_len + 1):
            if p_len > q_len:
                continue
            a = incs[:, lay.sl(p_len)]
            b = incs[:, lay.sl(q_len)]
            lhs = (a[:, :, None] * b[:, None, :]).reshape(incs.shape[0], -1)
            block = incs[:, lay.sl(p_len + q_len)].reshape((incs.shape[0],) + (lay.d,) * (p_len + q_len))
            rhs = np.zeros_like(lhs)
            for axes in T._shuffle_axes(p_len, q_len, False):
                rhs += np.transpose(block, (0,) + tuple(np.argsort(axes) + 1)).reshape(incs.shape[0], -1)
            worst = np.maximum(worst, np.max(np.abs(lhs - rhs), axis=1))
    return worst


def check_rough_axioms(X: RoughPath, grid: Sequence[float], tol: float = 1e-10) -> AxiomReport:
    """Multiplicativity on all grid triples, shuffle identity and regularity on all pairs.

    The regularity constant is the largest ratio ``|X^n_st| / omega^{n/p}``
    over pairs and levels ``1..floor(p)``; a least-squares fit of
    ``log|X^n|`` against ``log omega`` is reported alongside it.
    """
    grid = np.unique(np.asarray(grid, dtype=float))
    pairs = list(itertools.combinations(range(grid.size), 2))
    lefts = grid[[i for i, _ in pairs]]
    rights = grid[[j for _, j in pairs]]
    incs = X.pair_increments(lefts, rights)
    lay = X.layout
    lookup = {pair: k for k, pair in enumerate(pairs)}

    triples = list(itertools.combinations(range(grid.size), 3))
    mult = 0.0
    if triples:
        su = incs[[lookup[(i, j)] for i, j, _ in triples]]
        ut = incs[[lookup[(j, k)] for _, j, k in triples]]
        st = incs[[lookup[(i, k)] for i, _, k in triples]]
        mult = float(np.max(np.abs(T.flat_mul(su, ut, lay) - st)))
    shuffle = float(np.max(_shuffle_defects(incs, lay))) if pairs else 0.0

    omega = X.control(lefts, rights)
    ratio = 0.0
    fits: dict[int, tuple[float, float]] = {}
    for n in range(1, X.floor_p + 1):
        norms = np.max(np.abs(incs[:, lay.sl(n)]), axis=1)
        ratio = max(ratio, float(np.max(norms / omega ** (n / X.p))))
        keep = norms > 0
        if keep.sum() >= 3 and np.ptp(np.log(omega[keep])) > 0:
            fit = stats.linregress(np.log(omega[keep]), np.log(norms[keep]))
            fits[n] = (float(fit.slope), float(math.exp(fit.intercept)))
    return AxiomReport(mult, shuffle, ratio, fits, len(pairs))


def sym_defect(X: RoughPath, lefts, rights, level: int | None = None) -> float:
    """Largest violation of ``n! sym(X^n) = (X^1)^{tensor n}`` for ``n <= level`` (all stored levels by default)."""
    incs = X.pair_increments(lefts, rights)
    lay = X.layout
    level = X.level if level is None else min(level, X.level)
    worst = 0.0
    for n in range(1, level + 1):
        first = incs[:, lay.sl(1)]
        power = first
        for _ in range(n - 1):
            power = (power[:, :, None] * first[:, None, :]).reshape(incs.shape[0], -1)
        block = incs[:, lay.sl(n)].reshape((incs.shape[0],) + (X.d,) * n)
        sym = np.zeros_like(block)
        for perm in itertools.permutations(range(n)):
            sym += np.transpose(block, (0,) + tuple(k + 1 for k in perm))
        worst = max(worst, float(np.max(np.abs(sym.reshape(incs.shape[0], -1) - power))))
    return worst


def max_increment_gap(A: RoughPath, B: RoughPath, lefts, rights, level: int | None = None) -> float:
    """Sup distance between two rough paths on the given pairs, levels ``1..level``."""
    level = min(A.level, B.level) if level is None else level
    lay = layout(A.d, level)
    a = T.flat_truncate(A.pair_increments(lefts, rights), A.layout, lay)
    b = T.flat_truncate(B.pair_increments(lefts, rights), B.layout, lay)
    return float(np.max(np.abs(a - b)))


# IO ---------------------------------------------------------------------------


def read_path_csv(source: str | io.TextIOBase) -> tuple[np.ndarray, np.ndarray]:
    """Read ``t,x1,...,xd`` rows. Raises ``ValueError`` on malformed input."""
    handle = open(source, newline="") if isinstance(source, str) else source
    try:
        rows = list(csv.reader(handle))
    finally:
        if isinstance(source, str):
            handle.close()
    if not rows:
        raise ValueError("empty path file")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    if d < 1 or header[0] != "t" or header[1:] != [f"x{i}" for i in range(1, d + 1)]:
        raise ValueError(f"bad header {header!r}; expected t,x1,...,xd")
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
    except ValueError as exc:
        raise ValueError(f"non-numeric entry: {exc}") from None
    if data.ndim != 2 or data.shape[1] != d + 1:
        raise ValueError("ragged rows in path file")
    if data.shape[0] < 2 or np.any(np.diff(data[:, 0]) <= 0):
        raise ValueError("path times must be strictly increasing with at least two rows")
    return data[:, 0], data[:, 1:]


def write_path_csv(times: Iterable[float], points) -> str:
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["t"] + [f"x{i}" for i in range(1, points.shape[1] + 1)])
    for t, row in zip(times, points):
        writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    return out.getvalue()
