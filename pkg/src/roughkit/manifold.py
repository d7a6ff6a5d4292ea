"""Rough paths, integrals and RDEs on manifolds given by atlases.

A manifold rough path is an ordered cover of its time interval by pieces,
each living in one chart. Consecutive pieces overlap in time, and on the
overlap the transition map relates them. Integrals and RDE solutions are
assembled chart by chart and switched at the overlaps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import sympy as sp

from . import tensor as T
from .controlled import (
    ControlledPath,
    controlled_from_function,
    jet_gap,
    pullback,
    rough_integral,
)
from .jets import (
    ComposedJet,
    DerivativeJet,
    JetFunction,
    LinearJet,
    PrecomposedLinear,
    ProductJet,
    StackedJet,
    SympyJet,
    identity_jet,
)
from .rde import (
    DEFAULT_NORM_GUARD,
    RdeExplosionError,
    _compiled_euler,
    doubled_system,
    euler_coefficients,
    solve_doubled,
)
from .roughpath import (
    DEFAULT_TOL,
    PATH_MAX_DEPTH,
    RoughPath,
    SewingError,
    _relative_gap,
    check_rough_axioms,
    dyadic_grid,
    max_increment_gap,
    pwl_signature,
)
from .tensor import layout

DEFAULT_MARGIN = 0.1


class ChartDomainError(ValueError):
    """A path or state left the domain of the chart it was assigned to."""


# charts and atlases -------------------------------------------------------------


@dataclass
class Chart:
    """A chart with box domain ``lower < y < upper`` in chart coordinates.

    ``inverse`` maps chart coordinates to the ambient space. ``forward`` maps
    ambient points back and may be omitted when transitions are given
    explicitly.
    """

    name: str
    inverse: JetFunction
    lower: np.ndarray
    upper: np.ndarray
    forward: JetFunction | None = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if self.lower.size != self.inverse.in_dim or self.upper.size != self.inverse.in_dim:
            raise ValueError(f"chart {self.name!r}: domain box does not match the chart dimension")

    @property
    def dim(self) -> int:
        return self.inverse.in_dim

    def contains(self, y, margin: float = 0.0) -> np.ndarray:
        """Mask of points inside the domain shrunk by ``margin`` of its half-width on each side."""
        y = np.asarray(y, dtype=float).reshape(-1, self.dim)
        half = (self.upper - self.lower) / 2
        shrink = margin * np.where(np.isfinite(half), half, 0.0)
        return np.all((y > self.lower + shrink) & (y < self.upper - shrink), axis=1)

    def to_ambient(self, y) -> np.ndarray:
        return self.inverse(np.asarray(y, dtype=float).reshape(-1, self.dim))

    def from_ambient(self, x) -> np.ndarray:
        if self.forward is None:
            raise ValueError(f"chart {self.name!r} has no forward map")
        return self.forward(np.asarray(x, dtype=float).reshape(-1, self.forward.in_dim))


class Atlas:
    def __init__(self, charts: Sequence[Chart], transitions: Mapping[tuple[str, str], JetFunction] | None = None,
                 name: str = ""):
        if not charts:
            raise ValueError("an atlas needs at least one chart")
        self.charts = {c.name: c for c in charts}
        if len(self.charts) != len(charts):
            raise ValueError("chart names must be unique")
        dims = {c.dim for c in charts}
        if len(dims) != 1:
            raise ValueError("all charts must have the same dimension")
        self.dim = dims.pop()
        self.name = name
        self._transitions: dict[tuple[str, str], JetFunction] = dict(transitions or {})

    def __getitem__(self, name: str) -> Chart:
        try:
            return self.charts[name]
        except KeyError:
            raise KeyError(f"unknown chart {name!r}") from None

    def names(self) -> list[str]:
        return list(self.charts)

    def transition(self, src: str, dst: str) -> JetFunction:
        """The map ``dst o src^{-1}`` between chart coordinates (cached per pair)."""
        key = (src, dst)
        if key not in self._transitions:
            if src == dst:
                self._transitions[key] = identity_jet(self.dim)
            else:
                target = self[dst]
                if target.forward is None:
                    raise ValueError(f"no transition from {src!r} to {dst!r}")
                self._transitions[key] = ComposedJet(target.forward, self[src].inverse)
        return self._transitions[key]

    def to_json(self) -> str:
        """Charts as symbolic expressions (only for charts with symbolic jets)."""
        variables = [f"u{i + 1}" for i in range(self.dim)]
        symbols = sp.symbols(variables)

        def encode(fn):
            if fn is None:
                return None
            return [str(e) for e in fn.symbolic(symbols)]

        charts = []
        for c in self.charts.values():
            ambient = c.inverse.out_size
            amb_vars = [f"x{i + 1}" for i in range(ambient)]
            entry = {"name": c.name, "variables": variables, "inverse": encode(c.inverse),
                     "lower": _encode_bounds(c.lower), "upper": _encode_bounds(c.upper)}
            if c.forward is not None:
                entry["ambient_variables"] = amb_vars
                entry["forward"] = [str(e) for e in c.forward.symbolic(sp.symbols(amb_vars))]
            charts.append(entry)
        transitions = [{"from": a, "to": b, "map": encode(fn)} for (a, b), fn in self._transitions.items()
                       if a != b and not isinstance(fn, ComposedJet)]
        return json.dumps({"name": self.name, "charts": charts, "transitions": transitions})

    @classmethod
    def from_json(cls, text: str) -> "Atlas":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"atlas is not valid JSON: {exc}") from None
        charts = []
        for entry in doc.get("charts", []):
            variables = entry["variables"]
            inverse = SympyJet.from_strings(entry["inverse"], variables)
            forward = None
            if entry.get("forward"):
                forward = SympyJet.from_strings(entry["forward"], entry["ambient_variables"])
            charts.append(Chart(entry["name"], inverse, _decode_bounds(entry["lower"]),
                                _decode_bounds(entry["upper"]), forward))
        transitions = {}
        for entry in doc.get("transitions", []):
            variables = charts[0].inverse.symbols if charts else []
            transitions[(entry["from"], entry["to"])] = SympyJet(
                [sp.sympify(e, locals={str(s): s for s in variables}) for e in entry["map"]], variables)
        return cls(charts, transitions, doc.get("name", ""))


def _encode_bounds(values: np.ndarray) -> list:
    return [v if np.isfinite(v) else ("inf" if v > 0 else "-inf") for v in values.tolist()]


def _decode_bounds(values) -> np.ndarray:
    return np.array([float(v) for v in values])


# manifold rough paths -------------------------------------------------------------


@dataclass
class Piece:
    start: float
    end: float
    chart: str
    path: RoughPath


class ManifoldRoughPath:
    """Ordered cover of ``[t0, t1]`` by chart-local rough paths with overlapping intervals."""

    def __init__(self, atlas: Atlas, pieces: Sequence[Piece | tuple]):
        self.atlas = atlas
        self.pieces = [p if isinstance(p, Piece) else Piece(*p) for p in pieces]
        if not self.pieces:
            raise ValueError("a manifold rough path needs at least one piece")
        for piece in self.pieces:
            atlas[piece.chart]
            if not piece.start < piece.end:
                raise ValueError("pieces must have positive length")
            if piece.path.t0 > piece.start or piece.path.t1 < piece.end:
                raise ValueError("piece path does not cover its interval")
            if piece.path.d != atlas.dim:
                raise ValueError("piece path dimension differs from the chart dimension")
        for a, b in zip(self.pieces, self.pieces[1:]):
            if not (a.start < b.start < a.end < b.end):
                raise ValueError("consecutive pieces must overlap and advance")
        if len({p.path.p for p in self.pieces}) != 1:
            raise ValueError("pieces must share the regularity p")
        self.p = self.pieces[0].path.p
        self.floor_p = self.pieces[0].path.floor_p

    @property
    def t0(self) -> float:
        return self.pieces[0].start

    @property
    def t1(self) -> float:
        return self.pieces[-1].end

    def cuts(self) -> np.ndarray:
        """Default switching times: midpoints of the overlaps."""
        return np.array([(b.start + a.end) / 2 for a, b in zip(self.pieces, self.pieces[1:])])

    def piece_index(self, times, cuts: Sequence[float] | None = None) -> np.ndarray:
        cuts = self.cuts() if cuts is None else np.asarray(cuts, dtype=float)
        return np.searchsorted(cuts, np.asarray(times, dtype=float), side="right")

    def trace(self, times) -> np.ndarray:
        """Ambient points of the trace."""
        times = np.asarray(times, dtype=float).reshape(-1)
        idx = self.piece_index(times)
        out = None
        for j in np.unique(idx):
            sel = idx == j
            piece = self.pieces[j]
            pts = self.atlas[piece.chart].to_ambient(piece.path.trace(times[sel]))
            if out is None:
                out = np.zeros((times.size, pts.shape[1]))
            out[sel] = pts
        return out

    def overlaps(self) -> list[tuple[float, float]]:
        return [(b.start, a.end) for a, b in zip(self.pieces, self.pieces[1:])]

    def validate(self, tol: float = 1e-6, points: int = 9, path_tol: float = DEFAULT_TOL) -> dict:
        """Rough path axioms on every piece and transition compatibility on every overlap."""
        axioms = []
        ok = True
        for piece in self.pieces:
            grid = np.linspace(piece.start, piece.end, points)
            report = check_rough_axioms(piece.path, grid)
            ok = ok and report.passed(tol)
            axioms.append(report.as_dict())
        overlaps = []
        for j, (a, b) in enumerate(self.overlaps()):
            src, dst = self.pieces[j], self.pieces[j + 1]
            pushed = transition(src.path.restrict(a, b), self.atlas, src.chart, dst.chart, tol=path_tol)
            grid = np.linspace(a, b, points)
            lefts = np.concatenate([grid[:-1], np.full(points - 1, a)])
            rights = np.concatenate([grid[1:], grid[1:]])
            gap = max_increment_gap(pushed, dst.path, lefts, rights, self.floor_p)
            overlaps.append({"interval": [a, b], "charts": [src.chart, dst.chart], "defect": gap})
        ok = ok and all(o["defect"] < tol for o in overlaps)
        return {"pieces": axioms, "overlaps": overlaps, "passed": bool(ok)}

    def to_json(self, points: int = 5) -> str:
        out = []
        for piece in self.pieces:
            grid = np.linspace(piece.start, piece.end, points)
            out.append({"start": piece.start, "end": piece.end, "chart": piece.chart,
                        "path": json.loads(piece.path.to_json(grid))})
        return json.dumps({"atlas": self.atlas.name, "p": self.p, "pieces": out})


def transition(X: RoughPath, atlas: Atlas, src: str, dst: str, tol: float = DEFAULT_TOL,
               check_points: int = 65) -> RoughPath:
    """Push a chart-``src`` rough path into chart ``dst`` through the transition map."""
    times = np.linspace(X.t0, X.t1, check_points)
    pts = X.trace(times)
    if not atlas[src].contains(pts).all():
        raise ChartDomainError(f"path leaves the domain of chart {src!r}")
    fn = atlas.transition(src, dst)
    if not atlas[dst].contains(fn(pts)).all():
        raise ChartDomainError(f"path leaves the domain of chart {dst!r}")
    return controlled_from_function(fn, X).lift(tol=tol)


def manifold_path_from_samples(atlas: Atlas, times, chart_points: Mapping[str, np.ndarray] | Callable,
                               cover: Sequence[tuple[float, float, str]], level: int | None = None,
                               p: float = 1.0) -> ManifoldRoughPath:
    """Piecewise linear chart paths through sampled points.

    ``chart_points`` gives, per chart name, the chart coordinates at ``times``
    (or a callable ``(chart, times) -> coords``). Each cover interval must
    start and end on a sample time.
    """
    times = np.asarray(times, dtype=float)
    level = max(1, math.floor(p)) if level is None else level
    pieces = []
    for a, b, name in cover:
        sel = (times >= a) & (times <= b)
        ts = times[sel]
        if ts.size < 2 or ts[0] != a or ts[-1] != b:
            raise ValueError("cover endpoints must be sample times")
        pts = chart_points(name, ts) if callable(chart_points) else np.asarray(chart_points[name])[sel]
        if not atlas[name].contains(pts).all():
            raise ChartDomainError(f"samples leave the domain of chart {name!r}")
        samples = np.column_stack([ts, pts])
        pieces.append(Piece(a, b, name, pwl_signature(samples, level, p)))
    return ManifoldRoughPath(atlas, pieces)


def manifold_path_from_chart_path(atlas: Atlas, X: RoughPath, chart: str, cover: Sequence[tuple[float, float, str]],
                                  tol: float = DEFAULT_TOL) -> ManifoldRoughPath:
    """Cover a rough path given in one chart by its transitions into other charts."""
    pieces = []
    for a, b, name in cover:
        local = X.restrict(a, b)
        path = local if name == chart else transition(local, atlas, chart, name, tol=tol)
        pieces.append(Piece(a, b, name, path))
    return ManifoldRoughPath(atlas, pieces)


# one-forms and integration --------------------------------------------------------


class ManifoldOneForm:
    """Chart-wise integrands ``chart -> JetFunction`` with out shape ``(w, m)``."""

    def __init__(self, atlas: Atlas, local: Mapping[str, JetFunction]):
        self.atlas = atlas
        self.local = dict(local)
        shapes = {fn.out_shape for fn in self.local.values()}
        if len(shapes) != 1:
            raise ValueError("local forms must share their output shape")
        shape = shapes.pop()
        if len(shape) != 2 or shape[1] != atlas.dim:
            raise ValueError(f"local forms need shape (w, {atlas.dim})")
        self.w = shape[0]

    @classmethod
    def from_ambient(cls, atlas: Atlas, omega: JetFunction) -> "ManifoldOneForm":
        """Pull an ambient form ``omega: R^n -> L(R^n, R^w)`` back to every chart."""
        local = {}
        for name, chart in atlas.charts.items():
            base = ComposedJet(omega, chart.inverse)
            local[name] = ProductJet(base, DerivativeJet(chart.inverse))
        return cls(atlas, local)

    def __getitem__(self, chart: str) -> JetFunction:
        try:
            return self.local[chart]
        except KeyError:
            raise KeyError(f"form has no local expression in chart {chart!r}") from None

    def compatibility(self, X: ManifoldRoughPath, index: int, points: int = 9, tol: float = DEFAULT_TOL) -> float:
        """Jet gap between the two local integrands on overlap ``index`` after pulling back."""
        a, b = X.overlaps()[index]
        phi, psi = X.pieces[index], X.pieces[index + 1]
        moved = self.atlas.transition(psi.chart, phi.chart)
        local = psi.path.restrict(a, b)
        lifted = controlled_from_function(moved, local).lift(tol=tol)
        pulled = pullback(moved, controlled_from_function(self[phi.chart], lifted))
        direct = controlled_from_function(self[psi.chart], local)
        return jet_gap(pulled, direct, np.linspace(a, b, points))


def manifold_rough_integral(form: ManifoldOneForm, X: ManifoldRoughPath, cuts: Sequence[float] | None = None,
                            tol: float = DEFAULT_TOL) -> dict:
    """``int form dX`` as a sum of chart-local rough integrals split at ``cuts``.

    ``cuts`` holds one switching time per overlap (default: overlap midpoints).
    """
    cuts = X.cuts() if cuts is None else np.asarray(cuts, dtype=float)
    if cuts.size != len(X.pieces) - 1:
        raise ValueError("need exactly one cut per overlap")
    for c, (a, b) in zip(cuts, X.overlaps()):
        if not a <= c <= b:
            raise ValueError(f"cut {c} lies outside the overlap [{a}, {b}]")
    bounds = np.concatenate([[X.t0], cuts, [X.t1]])
    total = np.zeros(form.w)
    parts = []
    for j, piece in enumerate(X.pieces):
        H = controlled_from_function(form[piece.chart], piece.path)
        res = rough_integral(H, bounds[j], bounds[j + 1], tol=tol)
        total += res.value
        parts.append({"chart": piece.chart, "interval": [float(bounds[j]), float(bounds[j + 1])],
                      "value": res.value.tolist(), "depth": res.depth})
    return {"value": total, "parts": parts}


# RDEs on manifolds ------------------------------------------------------------------


FieldSource = Callable[[str, str], JetFunction] | Mapping[tuple[str, str], JetFunction]


@dataclass
class ManifoldRdeSolution:
    driver: ManifoldRoughPath
    target: Atlas
    grid: np.ndarray
    charts: list[str]
    values: np.ndarray
    ambient: np.ndarray
    depth: int
    history: list[float] = field(default_factory=list)
    fields: Callable[[str, str], JetFunction] | None = None

    def segments(self) -> list[tuple[float, float, str]]:
        """Maximal runs of grid steps spent in one target chart."""
        out = []
        start = 0
        for i in range(1, len(self.charts)):
            if self.charts[i] != self.charts[start]:
                out.append((float(self.grid[start]), float(self.grid[i]), self.charts[start]))
                start = i
        out.append((float(self.grid[start]), float(self.grid[-1]), self.charts[start]))
        return out

    def switches(self) -> list[tuple[float, str, str]]:
        return [(float(self.grid[i]), self.charts[i - 1], self.charts[i])
                for i in range(1, len(self.charts)) if self.charts[i] != self.charts[i - 1]]

    def trace(self, times) -> np.ndarray:
        """Ambient solution at arbitrary times: a Davie step in the chart of the grid node on the left."""
        times = np.asarray(times, dtype=float).reshape(-1)
        idx = np.clip(np.searchsorted(self.grid, times, side="right") - 1, 0, self.grid.size - 1)
        out = self.ambient[idx].copy()
        for k in np.nonzero(self.grid[idx] != times)[0]:
            i = idx[k]
            s, t = self.grid[i], times[k]
            j = int(self.driver.piece_index([s])[0])
            piece = self.driver.pieces[j]
            chart = self.charts[i]
            G = doubled_system(self.fields(piece.chart, chart), self.values.shape[1], self.driver.atlas.dim)
            N = self.driver.floor_p
            z = np.concatenate([piece.path.trace([s])[0], self.values[i]])
            inc = T.flat_truncate(piece.path.pair_increments([s], [t]), piece.path.layout,
                                  layout(piece.path.d, N))[0]
            y = self.values[i] + (euler_coefficients(G, z, N)[0] @ inc)[self.driver.atlas.dim:]
            out[k] = self.target[chart].to_ambient(y)[0]
        return out

    def diagnostics(self) -> dict:
        return {"depth": self.depth, "steps": int(self.grid.size - 1), "refinement_gaps": list(self.history),
                "switches": [list(s) for s in self.switches()]}


def _field_getter(fields: FieldSource) -> Callable[[str, str], JetFunction]:
    if callable(fields):
        return fields
    table = dict(fields)

    def get(driver_chart, target_chart):
        try:
            return table[(driver_chart, target_chart)]
        except KeyError:
            raise KeyError(f"no field for charts ({driver_chart!r}, {target_chart!r})") from None

    return get


def _step_pieces(X: ManifoldRoughPath, grid: np.ndarray) -> np.ndarray:
    """Driver piece used for each step: switch at the overlap midpoints, never leave a piece."""
    idx = X.piece_index(grid[:-1])
    for k in range(idx.size):
        piece = X.pieces[idx[k]]
        if grid[k + 1] > piece.end or grid[k] < piece.start:
            raise ChartDomainError("grid too coarse for the overlaps of the driver")
    return idx


def _choose_chart(atlas: Atlas, current: str, y: np.ndarray, margin: float,
                  order: Sequence[str]) -> tuple[str, np.ndarray]:
    for name in order:
        if name == current:
            continue
        moved = atlas.transition(current, name)(y[None, :])[0]
        if atlas[name].contains(moved, margin)[0]:
            return name, moved
    raise ChartDomainError(f"no chart of the target atlas contains the state {y}")


def _doubled_stepper(joint: JetFunction, e: int, m: int, N: int) -> Callable[[np.ndarray], np.ndarray]:
    """Euler coefficients of the doubled system, cached on the joint field across refinements."""
    cache = joint.__dict__.setdefault("_doubled_cache", {})
    key = (e, m, N)
    if key not in cache:
        G = doubled_system(joint, e, m)
        fast = _compiled_euler(G, N)
        cache[key] = fast if fast is not None else (lambda z: euler_coefficients(G, z, N)[0])
    return cache[key]


def _run_manifold_scheme(getter, X: ManifoldRoughPath, target: Atlas, grid: np.ndarray, chart0: str,
                         y0: np.ndarray, margin: float, order: Sequence[str], guard: float, depth: int):
    steps = _step_pieces(X, grid)
    N = X.floor_p
    m = X.atlas.dim
    lay = layout(m, N)
    xs = np.zeros((grid.size - 1, m))
    incs = np.zeros((grid.size - 1, lay.D))
    for j in np.unique(steps):
        sel = np.nonzero(steps == j)[0]
        path = X.pieces[j].path
        xs[sel] = path.trace(grid[sel])
        incs[sel] = T.flat_truncate(path.pair_increments(grid[sel], grid[sel + 1]), path.layout, lay)
    e = y0.size
    compiled: dict[tuple[str, str], Callable] = {}
    values = np.empty((grid.size, e))
    charts = [chart0]
    values[0] = y0
    y, chart = y0.copy(), chart0
    for i in range(grid.size - 1):
        key = (X.pieces[steps[i]].chart, chart)
        if key not in compiled:
            compiled[key] = _doubled_stepper(getter(*key), e, m, N)
        z = np.concatenate([xs[i], y])
        y = y + (compiled[key](z) @ incs[i])[m:]
        norm = float(np.max(np.abs(y)))
        if not np.isfinite(norm) or norm > guard:
            raise RdeExplosionError(float(grid[i + 1]), norm, depth, guard)
        if not target[chart].contains(y, margin)[0]:
            if not target[chart].contains(y)[0]:
                raise ChartDomainError(f"state left chart {chart!r} within one step at t={grid[i + 1]}")
            chart, y = _choose_chart(target, chart, y, margin, order)
        values[i + 1] = y
        charts.append(chart)
    ambient = np.zeros((grid.size, target[chart0].inverse.out_size))
    names = np.array(charts)
    for name in set(charts):
        sel = names == name
        ambient[sel] = target[name].to_ambient(values[sel])
    return charts, values, ambient


def solve_manifold_rde(fields: FieldSource, X: ManifoldRoughPath, target: Atlas, chart0: str, y0,
                       tol: float = DEFAULT_TOL, max_depth: int = PATH_MAX_DEPTH, min_depth: int = 4,
                       margin: float = DEFAULT_MARGIN, order: Sequence[str] | None = None,
                       norm_guard: float = DEFAULT_NORM_GUARD) -> ManifoldRdeSolution:
    """Solve ``dY = F(Y) dX`` between manifolds by greedy chart switching.

    ``fields(driver_chart, target_chart)`` returns the local field as a map of
    ``(y, x)`` with out shape ``(e, m)``. The state stays in its chart until it
    leaves the domain shrunk by ``margin``, then moves to the first chart in
    ``order`` that contains it with the same margin. Dyadic refinement stops
    when ambient values on the coarse grid agree within ``tol``.
    """
    getter = _field_getter(fields)
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    if y0.size != target.dim:
        raise ValueError("initial state does not match the target chart dimension")
    if not target[chart0].contains(y0)[0]:
        raise ChartDomainError(f"initial state is outside chart {chart0!r}")
    order = target.names() if order is None else list(order)
    history: list[float] = []
    prev = None
    for depth in range(1, max_depth + 1):
        grid = dyadic_grid(X.t0, X.t1, depth)
        try:
            charts, values, ambient = _run_manifold_scheme(getter, X, target, grid, chart0, y0, margin, order,
                                                           norm_guard, depth)
        except ChartDomainError:
            if depth >= max_depth:
                raise
            prev = None
            continue
        if prev is not None:
            gap = _relative_gap(ambient[::2], prev[2])
            history.append(gap)
            if gap < tol and depth >= min_depth:
                return ManifoldRdeSolution(X, target, grid, charts, values, ambient, depth, history, getter)
        prev = (grid, values, ambient)
    raise SewingError("manifold Euler scheme did not settle", max_depth,
                      history[-1] if history else float("nan"), history)


def solution_pieces(sol: ManifoldRdeSolution, tol: float = DEFAULT_TOL) -> ManifoldRoughPath:
    """Chart-local lifts of the solution as a manifold rough path.

    Each run of constant (driver piece, target chart) is re-solved as a
    doubled RDE and extended past its switch until halfway to where the state
    would leave the chart, so that consecutive pieces overlap.
    """
    X = sol.driver
    steps = np.concatenate([X.piece_index(sol.grid[:-1]), [X.piece_index(sol.grid[-2:-1])[0]]])
    m = X.atlas.dim
    runs = []
    start = 0
    for i in range(1, sol.grid.size):
        change = sol.charts[i] != sol.charts[start] or steps[i] != steps[start]
        if change or i == sol.grid.size - 1:
            runs.append((start, i))
            start = i
    pieces = []
    for k, (i0, i1) in enumerate(runs):
        chart = sol.charts[i0]
        driver = X.pieces[steps[i0]]
        end = sol.grid[i1]
        if k + 1 < len(runs):
            limit = min(driver.end, X.t1)
            exit_time = limit
            for i in range(i1, sol.grid.size):
                if sol.grid[i] > limit:
                    break
                here = sol.charts[i]
                moved = sol.target.transition(here, chart)(sol.values[i][None, :])
                if not sol.target[chart].contains(moved)[0]:
                    exit_time = sol.grid[i]
                    break
            end = min(end + (exit_time - end) / 2, limit)
            end = sol.grid[np.searchsorted(sol.grid, end, side="right") - 1]
            if end <= sol.grid[i1]:
                raise ChartDomainError("no room to overlap consecutive solution pieces")
        local = driver.path.restrict(float(sol.grid[i0]), float(end))
        rde = solve_doubled(sol.fields(driver.chart, chart), local, sol.values[i0], tol=tol)
        e = sol.values.shape[1]

        def jets(times, rde=rde):
            return rde.jets(times)[:, m:, :]

        def trace(times, rde=rde):
            return rde.trace(times)[:, m:]

        H = ControlledPath(local, e, jets, local.floor_p, (e,), trace, name="manifold rde piece")
        pieces.append(Piece(float(sol.grid[i0]), float(end), chart, H.lift(tol=tol)))
    return ManifoldRoughPath(sol.target, pieces)


# constrained rough paths -----------------------------------------------------------


def radial_projection(n: int) -> SympyJet:
    """``x -> x / |x|``, the nearest-point projection onto the unit sphere."""
    xs = sp.symbols(f"x1:{n + 1}")
    norm = sp.sqrt(sum(x**2 for x in xs))
    return SympyJet([x / norm for x in xs], xs)


def constrained_check(X: RoughPath, projection: JetFunction, grid: Sequence[float] | None = None,
                      tol: float = 1e-6, neighbourhood: Callable[[np.ndarray], np.ndarray] | None = None,
                      path_tol: float = DEFAULT_TOL) -> dict:
    """Compare ``X`` with ``projection_* X`` level by level and through the log signature."""
    grid = np.linspace(X.t0, X.t1, 9) if grid is None else np.asarray(grid, dtype=float)
    if neighbourhood is not None:
        fine = np.linspace(X.t0, X.t1, 257)
        if not np.all(neighbourhood(X.trace(fine))):
            raise ChartDomainError("the trace leaves the neighbourhood where the projection is defined")
    pushed = controlled_from_function(projection, X).lift(tol=path_tol)
    lefts = np.concatenate([grid[:-1], np.full(grid.size - 1, grid[0])])
    rights = np.concatenate([grid[1:], grid[1:]])
    N = X.floor_p
    lay = layout(X.d, N)
    a = T.flat_truncate(X.pair_increments(lefts, rights), X.layout, lay)
    b = T.flat_truncate(pushed.pair_increments(lefts, rights), pushed.layout, lay)
    levels = {n: float(np.max(np.abs(a[:, lay.sl(n)] - b[:, lay.sl(n)]))) for n in range(1, N + 1)}
    log_gap = float(np.max(np.abs(T.flat_log(a, lay) - T.flat_log(b, lay))))
    worst = max(max(levels.values()), log_gap)
    return {"levels": levels, "log_defect": log_gap, "defect": worst, "passed": worst < tol}


# built-in atlases ------------------------------------------------------------------


def circle_atlas(offsets: Sequence[float] = (0.0, math.pi)) -> Atlas:
    """Angle charts of the unit circle, one per offset ``c``, with range ``(c - pi, c + pi)``."""
    theta = sp.Symbol("theta")
    x, y = sp.symbols("x y")
    charts = []
    for k, c in enumerate(offsets):
        c = float(c)
        inverse = SympyJet([sp.cos(theta), sp.sin(theta)], [theta])
        rot_x = x * math.cos(c) + y * math.sin(c)
        rot_y = -x * math.sin(c) + y * math.cos(c)
        forward = SympyJet([c + sp.atan2(rot_y, rot_x)], [x, y])
        charts.append(Chart(f"angle{k}", inverse, [c - math.pi], [c + math.pi], forward))
    return Atlas(charts, name="circle")


def circle_angles(chart: Chart, angles) -> np.ndarray:
    """Represent unwrapped angles inside the range of an angle chart."""
    angles = np.asarray(angles, dtype=float).reshape(-1)
    low = chart.lower[0]
    return (low + np.mod(angles - low, 2 * math.pi)).reshape(-1, 1)


def sphere_atlas(box: float = 2.0) -> Atlas:
    """Stereographic charts of the unit sphere in ``R^3``.

    Chart ``south`` sends 0 to the south pole, ``north`` sends 0 to the north
    pole. Both use the box ``(-box, box)^2`` and are related by ``y -> y/|y|^2``.
    """
    y1, y2 = sp.symbols("y1 y2")
    x1, x2, x3 = sp.symbols("x1 x2 x3")
    r2 = y1**2 + y2**2
    south_inv = SympyJet([2 * y1 / (1 + r2), 2 * y2 / (1 + r2), (r2 - 1) / (1 + r2)], [y1, y2])
    north_inv = SympyJet([2 * y1 / (1 + r2), 2 * y2 / (1 + r2), (1 - r2) / (1 + r2)], [y1, y2])
    south_fwd = SympyJet([x1 / (1 - x3), x2 / (1 - x3)], [x1, x2, x3])
    north_fwd = SympyJet([x1 / (1 + x3), x2 / (1 + x3)], [x1, x2, x3])
    flip = SympyJet([y1 / r2, y2 / r2], [y1, y2])
    lower, upper = [-box, -box], [box, box]
    charts = [Chart("south", south_inv, lower, upper, south_fwd), Chart("north", north_inv, lower, upper, north_fwd)]
    return Atlas(charts, {("south", "north"): flip, ("north", "south"): flip}, name="sphere")


def _selector(rows: Sequence[int], n: int, out_shape=None) -> LinearJet:
    A = np.zeros((len(rows), n))
    A[np.arange(len(rows)), list(rows)] = 1.0
    return LinearJet(A, out_shape=out_shape)


def frame_bundle_atlas(base: Atlas) -> Atlas:
    """Charts ``(y, A)`` of the frame bundle with ``A`` stored row-major.

    Transitions act by ``(y, A) -> (tau(y), D tau(y) A)``. The ambient image of
    a frame chart is the base point followed by the frame vectors (row-major).
    """
    m = base.dim
    n = m + m * m
    pick_y = _selector(range(m), n)
    pick_A = _selector(range(m, n), n, out_shape=(m, m))
    sel_y = np.zeros((m, n))
    sel_y[:, :m] = np.eye(m)

    def lift_map(fn: JetFunction, out_rows: int) -> JetFunction:
        point = PrecomposedLinear(fn, sel_y)
        frame = ProductJet(ComposedJet(DerivativeJet(fn), pick_y), pick_A)
        return StackedJet([point, frame], out_shape=(point.out_size + out_rows * m,))

    charts = []
    for c in base.charts.values():
        inverse = lift_map(c.inverse, c.inverse.out_size)
        lower = np.concatenate([c.lower, np.full(m * m, -np.inf)])
        upper = np.concatenate([c.upper, np.full(m * m, np.inf)])
        charts.append(Chart(c.name, inverse, lower, upper))
    transitions = {}
    for a in base.charts:
        for b in base.charts:
            if a != b:
                transitions[(a, b)] = lift_map(base.transition(a, b), m)
    return Atlas(charts, transitions, name=f"frames of {base.name}")


def sphere_development_field() -> SympyJet:
    """Horizontal lift on the frame bundle of the round sphere in a stereographic chart.

    State ``(y1, y2, A11, A12, A21, A22)``, driver in ``R^2``; out shape (6, 2).
    The metric is ``4 / (1 + |y|^2)^2`` times the identity in either chart.
    """
    y = sp.symbols("y1 y2")
    A = sp.Matrix(2, 2, sp.symbols("a11 a12 a21 a22"))
    r2 = y[0]**2 + y[1]**2
    dphi = [-2 * y[i] / (1 + r2) for i in range(2)]

    def christoffel(k, i, j):
        return (dphi[j] if k == i else 0) + (dphi[i] if k == j else 0) - (dphi[k] if i == j else 0)

    rows = [[A[k, alpha] for alpha in range(2)] for k in range(2)]
    for k in range(2):
        for gamma in range(2):
            rows.append([sp.simplify(-sum(christoffel(k, i, j) * A[i, alpha] * A[j, gamma]
                                          for i in range(2) for j in range(2))) for alpha in range(2)])
    exprs = [e for row in rows for e in row]
    return SympyJet(exprs, list(y) + list(A), out_shape=(6, 2))


def development_fields(driver_dim: int = 2) -> Callable[[str, str], JetFunction]:
    """Field getter for developing a flat ``R^2`` driver onto the sphere's frame bundle."""
    F = sphere_development_field()
    joint = PrecomposedLinear(F, np.eye(6, 6 + driver_dim))

    def get(driver_chart, target_chart):
        return joint

    return get


def flat_atlas(dim: int) -> Atlas:
    """The identity chart of ``R^dim``."""
    ident = identity_jet(dim)
    return Atlas([Chart("flat", ident, np.full(dim, -np.inf), np.full(dim, np.inf), ident)], name="flat")
