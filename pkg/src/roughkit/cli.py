"""Command-line front end.

Exit codes: 0 success, 1 a defect exceeded its threshold, 2 bad input,
3 a numerical limit did not settle.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import math
import os
import sys
from typing import Any

import click
import numpy as np

from . import __version__
from . import manifold as M
from .controlled import controlled_from_function, integral_path
from .identities import run_suite
from .jets import jet_from_descriptor
from .rde import RdeExplosionError, load_scenario, solve
from .roughpath import (
    DEFAULT_TOL,
    PATH_MAX_DEPTH,
    RoughPath,
    SewingError,
    check_rough_axioms,
    pure_area_path,
    pwl_signature,
    read_path_csv,
    write_path_csv,
)
from .words import all_words

EXIT_OK, EXIT_DEFECT, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
SETTINGS_KEYS = ("p", "level", "tol", "depth", "format", "seed")


class InputError(Exception):
    pass


class DefectError(Exception):
    def __init__(self, payload: str):
        super().__init__("defect above threshold")
        self.payload = payload


def _settings(ctx: click.Context, options: dict) -> dict:
    settings = {k: options.get(k) for k in SETTINGS_KEYS}
    config = options.get("config")
    loaded: dict = {}
    if config:
        try:
            with open(config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise InputError("config must be a JSON object")
        unknown = set(loaded) - set(SETTINGS_KEYS)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        settings.update(loaded)
    p = float(settings["p"])
    if not 1.0 <= p < 4.0:
        raise InputError("p must lie in [1, 4)")
    level = math.floor(p) if settings["level"] is None else int(settings["level"])
    if not math.floor(p) <= level <= 6:
        raise InputError("level must lie between floor(p) and 6")
    fmt = settings["format"]
    if fmt not in ("json", "csv"):
        raise InputError("format must be json or csv")
    settings.update(p=p, level=level, tol=float(settings["tol"]), depth=int(settings["depth"]),
                    seed=int(settings["seed"]), format=fmt)
    return {"command": ctx.info_name, "version": __version__, **settings, "config": loaded or None}


def common_options(fn):
    @click.option("--p", "p", type=float, default=2.5, show_default=True, help="Regularity exponent in [1, 4).")
    @click.option("--level", type=int, default=None, help="Truncation level (default floor(p)).")
    @click.option("--tol", type=float, default=1e-6, show_default=True, help="Defect threshold.")
    @click.option("--depth", type=int, default=PATH_MAX_DEPTH, show_default=True, help="Maximum dyadic depth.")
    @click.option("--format", "format", default="json", show_default=True, help="Output format: json or csv.")
    @click.option("--seed", type=int, default=0, show_default=True, help="Seed for randomized suites.")
    @click.option("--config", type=click.Path(), default=None, help="JSON file overriding the flags above.")
    @click.pass_context
    @functools.wraps(fn)
    def wrapper(ctx, **kwargs):
        options = {k: kwargs.pop(k) for k in list(kwargs) if k in SETTINGS_KEYS + ("config",)}
        try:
            meta = _settings(ctx, options)
            out = fn(meta, **kwargs)
        except DefectError as exc:
            click.echo(exc.payload)
            ctx.exit(EXIT_DEFECT)
        except (InputError, ValueError, KeyError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_INPUT)
        except (SewingError, RdeExplosionError, M.ChartDomainError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            ctx.exit(EXIT_NUMERIC)
        click.echo(out)

    return wrapper


def _dump(meta: dict, payload: dict) -> str:
    return json.dumps({"metadata": meta, **payload}, indent=2, default=_jsonable)


def _jsonable(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"not serializable: {type(value).__name__}")


def _finish(meta: dict, payload: dict, ok: bool) -> str:
    text = _dump(meta, payload)
    if not ok:
        raise DefectError(text)
    return text


def _rows_csv(header: list[str], rows) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue().rstrip("\n")


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from None


def _driver(spec: Any, meta: dict, base_dir: str) -> RoughPath:
    """Driver from ``{"csv": file}``, ``{"samples": rows}`` or ``{"area": matrix, "start": point}``."""
    if isinstance(spec, str):
        spec = {"csv": spec}
    if not isinstance(spec, dict):
        raise InputError("driver must be an object")
    if "csv" in spec:
        times, points = read_path_csv(os.path.join(base_dir, spec["csv"]))
        return pwl_signature(np.column_stack([times, points]), meta["level"], p=meta["p"])
    if "samples" in spec:
        samples = np.asarray(spec["samples"], dtype=float)
        if samples.ndim != 2 or samples.shape[1] < 2:
            raise InputError("samples must be rows of t,x1,...,xd")
        return pwl_signature(samples, meta["level"], p=meta["p"])
    if "area" in spec:
        return pure_area_path(spec["area"], p=meta["p"], start=spec.get("start"))
    raise InputError("driver needs one of csv, samples, area")


def _grid(X: RoughPath, spec: dict) -> np.ndarray:
    points = int(spec.get("grid", 9))
    if points < 2:
        raise InputError("grid needs at least two points")
    return np.linspace(X.t0, X.t1, points)


@click.group()
@click.version_option(__version__, prog_name="roughkit")
def main():
    """Rough path signatures, controlled integration, RDEs and manifold demos."""


@main.command()
@click.argument("path", type=click.Path())
@common_options
def sig(meta, path):
    """Signature of a CSV path over its whole time interval."""
    times, points = read_path_csv(path)
    X = pwl_signature(np.column_stack([times, points]), meta["level"], p=meta["p"])
    series = X(X.t0, X.t1)
    if meta["format"] == "csv":
        rows = [["".join(map(str, w)) or "()", repr(float(series[w]))]
                for n in range(series.N + 1) for w in all_words(series.d, n)]
        return _rows_csv(["word", "value"], rows)
    return _dump(meta, {"signature": series.to_json_obj()})


@main.command()
@click.argument("path", type=click.Path())
@click.option("--points", type=int, default=17, show_default=True, help="Grid points for the pair checks.")
@common_options
def check(meta, path, points):
    """Rough path axiom report for a CSV path."""
    times, values = read_path_csv(path)
    X = pwl_signature(np.column_stack([times, values]), meta["level"], p=meta["p"])
    report = check_rough_axioms(X, np.linspace(X.t0, X.t1, points))
    return _finish(meta, {"report": report.as_dict(), "pass": report.passed(meta["tol"])}, report.passed(meta["tol"]))


@main.command()
@click.argument("spec", type=click.Path())
@common_options
def lift(meta, spec):
    """Lift ``F(X)`` for a map descriptor: ``{"driver", "function", "grid"}``."""
    doc = _read_json(spec)
    X = _driver(doc.get("driver"), meta, os.path.dirname(spec))
    F = jet_from_descriptor(doc.get("function", {}))
    lifted = controlled_from_function(F, X).lift(tol=min(DEFAULT_TOL, meta["tol"]), max_depth=meta["depth"])
    grid = _grid(X, doc)
    return _dump(meta, {"depth": lifted.depth, "path": json.loads(lifted.to_json(grid))})


@main.command()
@click.argument("spec", type=click.Path())
@common_options
def integrate(meta, spec):
    """Rough integral of an integrand descriptor of shape (w, d) as a path CSV."""
    doc = _read_json(spec)
    X = _driver(doc.get("driver"), meta, os.path.dirname(spec))
    H = controlled_from_function(jet_from_descriptor(doc.get("integrand", {})), X)
    grid = _grid(X, doc)
    values = integral_path(H, grid, tol=min(DEFAULT_TOL, meta["tol"]), max_depth=meta["depth"])
    if meta["format"] == "csv":
        return write_path_csv(grid, values).rstrip("\n")
    return _dump(meta, {"times": grid, "values": values})


@main.command()
@click.argument("scenario", type=click.Path())
@common_options
def rde(meta, scenario):
    """Solve ``dY = F(Y) dX`` from a scenario ``{"driver", "field", "y0", "expected"?}``."""
    with open(scenario) as fh:
        doc = load_scenario(fh.read())
    X = _driver(doc["driver"], meta, os.path.dirname(scenario))
    F = jet_from_descriptor(doc["field"])
    sol = solve(F, X, doc["y0"], tol=min(DEFAULT_TOL, meta["tol"]), max_depth=meta["depth"])
    final = sol.values[-1]
    payload: dict[str, Any] = {"final": final, "diagnostics": sol.diagnostics()}
    ok = True
    if "expected" in doc:
        defect = float(np.max(np.abs(final - np.asarray(doc["expected"], dtype=float))))
        ok = defect < meta["tol"]
        payload["check"] = {"name": "final value", "defect": defect, "threshold": meta["tol"], "pass": ok}
    if meta["format"] == "csv":
        text = sol.to_csv().rstrip("\n")
        if not ok:
            raise DefectError(text)
        return text
    payload["times"] = sol.grid[:: max(1, sol.grid.size // 64)]
    payload["values"] = sol.values[:: max(1, sol.grid.size // 64)]
    return _finish(meta, payload, ok)


@main.command()
@click.option("--suite", default="core", show_default=True, help="Identity suite to run.")
@common_options
def identities(meta, suite):
    """Run the identity battery and print its defect table."""
    records = run_suite(suite, threshold=meta["tol"], tol=min(DEFAULT_TOL, meta["tol"] / 100), seed=meta["seed"])
    ok = all(r["pass"] for r in records)
    if meta["format"] == "csv":
        text = _rows_csv(["name", "identity", "scenario", "defect", "threshold", "pass"],
                         [[r["name"], r["identity"], r["scenario"], repr(r["defect"]), r["threshold"], r["pass"]]
                          for r in records])
        if not ok:
            raise DefectError(text)
        return text
    return _finish(meta, {"report": records, "pass": ok}, ok)


def _angle_cover(atlas: M.Atlas, times: np.ndarray, angles: np.ndarray, guard: float = 0.5) -> list:
    """Overlapping pieces, each kept at least ``guard`` away from its chart's cut."""
    centres = {name: atlas[name].lower[0] + math.pi for name in atlas.names()}
    reach = math.pi - guard

    def nearest(k):
        # chart centre lifted to the branch closest to the unwrapped angle
        return min(((n, c + 2 * math.pi * round((angles[k] - c) / (2 * math.pi))) for n, c in centres.items()),
                   key=lambda item: abs(angles[k] - item[1]))

    cover, start = [], 0
    name, centre = nearest(0)
    while True:
        inside = np.abs(angles[start:] - centre) < reach
        if inside.all():
            cover.append((times[start], times[-1], name))
            return cover
        exit_at = start + int(np.argmin(inside))
        cover.append((times[start], times[exit_at - 1], name))
        name, centre = nearest(exit_at)
        back = exit_at
        while back - 1 > start and abs(angles[back - 1] - centre) < reach:
            back -= 1
        if back >= exit_at - 1:
            raise InputError("angle samples are too coarse to cover by charts")
        start = back


def _winding(doc: dict, meta: dict) -> dict:
    atlas = M.circle_atlas()
    samples = int(doc.get("samples", 4097))
    loops = float(doc.get("loops", 1.0))
    times = np.linspace(0.0, 1.0, samples)
    angles = 2 * math.pi * loops * times + float(doc.get("wobble", 0.0)) * np.sin(2 * math.pi * times)
    X = M.manifold_path_from_samples(atlas, times, lambda name, t: M.circle_angles(atlas[name], np.interp(t, times, angles)),
                                     _angle_cover(atlas, times, angles), p=meta["p"])
    form = M.ManifoldOneForm.from_ambient(atlas, jet_from_descriptor(
        {"variables": ["x", "y"], "expressions": ["-y/(x**2+y**2)", "x/(x**2+y**2)"], "shape": [1, 2]}))
    value = float(M.manifold_rough_integral(form, X, tol=min(DEFAULT_TOL, meta["tol"]))["value"][0])
    expected = 2 * math.pi * loops
    defect = abs(value - expected)
    return {"value": value, "expected": expected,
            "check": {"name": "winding", "defect": defect, "threshold": meta["tol"], "pass": defect < meta["tol"]}}


def _development(doc: dict, meta: dict) -> dict:
    v = np.asarray(doc.get("velocity", [0.8 * math.pi, 0.6 * math.pi]), dtype=float)
    if v.shape != (2,):
        raise InputError("velocity must have two components")
    ts = np.array([0.0, 1.0])
    Z = pwl_signature(np.column_stack([ts, np.outer(ts, v)]), max(2, meta["level"]), p=max(meta["p"], 2.0))
    driver = M.ManifoldRoughPath(M.flat_atlas(2), [M.Piece(0.0, 1.0, "flat", Z)])
    frames = M.frame_bundle_atlas(M.sphere_atlas())
    sol = M.solve_manifold_rde(M.development_fields(), driver, frames, "south", [0, 0, 0.5, 0, 0, 0.5],
                               tol=min(1e-6, meta["tol"]), max_depth=meta["depth"])
    times = np.linspace(0, 1, int(doc.get("grid", 11)))
    points = sol.trace(times)[:, :3]
    speed = np.linalg.norm(v)
    exact = np.column_stack([np.outer(np.sin(speed * times), v / speed), -np.cos(speed * times)])
    sphere = float(np.max(np.abs(np.linalg.norm(points, axis=1) - 1)))
    geodesic = float(np.max(np.abs(points - exact)))
    checks = [{"name": "on sphere", "defect": sphere, "threshold": meta["tol"], "pass": sphere < meta["tol"]},
              {"name": "geodesic", "defect": geodesic, "threshold": meta["tol"], "pass": geodesic < meta["tol"]}]
    return {"times": times, "points": points, "diagnostics": sol.diagnostics(), "checks": checks}


@main.command()
@click.argument("scenario", type=click.Path())
@common_options
def manifold(meta, scenario):
    """Manifold demos: ``{"demo": "winding" | "development", ...}``."""
    doc = _read_json(scenario)
    demo = doc.get("demo")
    if demo == "winding":
        payload = _winding(doc, meta)
        ok = payload["check"]["pass"]
    elif demo == "development":
        payload = _development(doc, meta)
        ok = all(c["pass"] for c in payload["checks"])
    else:
        raise InputError("demo must be 'winding' or 'development'")
    return _finish(meta, payload, ok)


if __name__ == "__main__":
    sys.exit(main())
