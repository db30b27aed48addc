"""Scenario files: TOML with a fixed set of sections and keys.

See ``docs/scenario-format.md`` for the annotated schema.  A scenario names a
process, an initial signed measure, the run parameters and optionally a PDE
grid and test functions.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .dynamics import (
    DIFFUSION,
    JUMP_WALK,
    ConfigurationError,
    ProcessSpec,
    apply_generator,
    apply_kappa_shift,
    check_coefficients,
    transform_backward_to_forward,
)
from .expr import Expr, ExprSyntaxError, parse_expr
from .fokker_planck import FDSolverConfig
from .measures import INF, canonicalize
from .montecarlo import InitialLaw, TestFunction

BUILTIN_PACKAGE = "zerocross.scenarios"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    process: ProcessSpec
    initial: InitialLaw
    t_grid: tuple[float, ...]
    n: int = 200
    replicas: int = 5
    dt: float = 1e-2
    collide_tol: float = 1e-9
    seed: int = 0
    pde: FDSolverConfig | None = None
    functions: tuple[TestFunction, ...] = ()
    description: str = ""
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def t_end(self) -> float:
        return self.t_grid[-1]

    def digest(self, seed: int | None = None) -> str:
        """Content hash of the scenario definition and seed."""
        payload = json.dumps({"scenario": _jsonable(self.raw), "seed": self.seed if seed is None else seed}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    def with_overrides(self, **kw) -> Scenario:
        raw = dict(self.raw)
        run = dict(raw.get("run", {}))
        for key in ("n", "replicas", "dt", "seed", "t_grid"):
            if key in kw:
                run[key] = list(kw[key]) if key == "t_grid" else kw[key]
        raw["run"] = run
        return replace(self, raw=raw, **kw)


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


_SECTIONS = {
    "": {"name", "description", "process", "initial", "run", "pde", "functions"},
    "process": {"kind", "alpha", "beta", "gamma", "a", "b", "c", "lower", "upper", "kappa"},
    "initial": {"atoms", "edges", "values", "function", "lower", "upper", "cells"},
    "run": {"n", "replicas", "dt", "t_grid", "seed", "collide_tol"},
    "pde": {"x_min", "x_max", "points", "dt", "theta", "advection"},
    "functions": {"label", "f", "Af"},
}


def _unknown(section: str, table: dict) -> None:
    for key in table:
        if key not in _SECTIONS[section]:
            where = f"{section}.{key}" if section else key
            raise ScenarioError(f"{where}: unknown key")


def _expr(table: dict, key: str, section: str) -> Expr:
    try:
        return parse_expr(table[key])
    except (ExprSyntaxError, TypeError) as exc:
        raise ScenarioError(f"{section}.{key}: {exc}") from exc


def _number(table: dict, key: str, section: str, default=None, kind=float):
    if key not in table:
        if default is None:
            raise ScenarioError(f"{section}.{key}: missing")
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{section}.{key}: expected a number, got {v!r}")
    if kind is int:
        if int(v) != v:
            raise ScenarioError(f"{section}.{key}: expected an integer")
        return int(v)
    return float(v)


def _build_process(p: dict, t_end: float, window) -> ProcessSpec:
    _unknown("process", p)
    kind = p.get("kind", DIFFUSION)
    lower = _number(p, "lower", "process", -INF)
    upper = _number(p, "upper", "process", INF)
    if kind == JUMP_WALK:
        extra = {"alpha", "beta", "gamma", "a", "b", "c", "kappa"} & p.keys()
        if extra:
            raise ScenarioError(f"process.{sorted(extra)[0]}: not allowed for the jump walk")
        return ProcessSpec(kind=JUMP_WALK, lower=lower, upper=upper)
    if kind != DIFFUSION:
        raise ScenarioError(f"process.kind: unknown kind {kind!r}")
    forward = {"alpha", "beta", "gamma"} & p.keys()
    backward = {"a", "b", "c"} & p.keys()
    if forward and backward:
        raise ScenarioError(
            f"process.{sorted(backward)[0]}: the alpha/beta/gamma and a/b/c groups are mutually exclusive"
        )
    if backward:
        if "a" not in p:
            raise ScenarioError("process.a: missing (a/b/c scenarios need the diffusion coefficient a)")
        a = _expr(p, "a", "process")
        b = _expr(p, "b", "process") if "b" in p else parse_expr("0")
        c = _expr(p, "c", "process") if "c" in p else parse_expr("0")
        try:
            alpha, beta, gamma = transform_backward_to_forward(a, b, c)
        except ValueError as exc:
            raise ScenarioError(f"process.a: {exc}") from exc
    else:
        alpha = _expr(p, "alpha", "process") if "alpha" in p else parse_expr("1")
        beta = _expr(p, "beta", "process") if "beta" in p else parse_expr("0")
        gamma = _expr(p, "gamma", "process") if "gamma" in p else parse_expr("0")
    try:
        spec = ProcessSpec(DIFFUSION, alpha, beta, gamma, lower, upper)
    except ConfigurationError as exc:
        raise ScenarioError(f"process: {exc}") from exc
    kappa = _number(p, "kappa", "process", 0.0)
    try:
        if kappa:
            spec = apply_kappa_shift(spec, kappa, t_end, window or spec.probe_window())
        else:
            check_coefficients(spec, t_end, window or spec.probe_window())
    except ConfigurationError as exc:
        key = "gamma" if "gamma" in str(exc) else "alpha"
        if backward:
            key = "c" if key == "gamma" else "a"
        raise ScenarioError(f"process.{key}: {exc}") from exc
    return spec


def _build_initial(d: dict, interval) -> InitialLaw:
    _unknown("initial", d)
    groups = [k for k in ("atoms", "edges", "function") if k in d]
    if len(groups) != 1:
        raise ScenarioError("initial: give exactly one of atoms, edges/values or function")
    try:
        if "atoms" in d:
            atoms = [(float(p), float(w)) for p, w in d["atoms"]]
            return InitialLaw.from_atoms(canonicalize(atoms, 0.0, interval))
        if "edges" in d:
            if "values" not in d:
                raise ScenarioError("initial.values: missing")
            return InitialLaw.from_density(d["edges"], d["values"])
        f = _expr(d, "function", "initial")
        lo = _number(d, "lower", "initial")
        hi = _number(d, "upper", "initial")
        cells = _number(d, "cells", "initial", 1000, int)
        edges = np.linspace(lo, hi, cells + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        return InitialLaw.from_density(edges, f.evaluate(0.0, mids))
    except ScenarioError:
        raise
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"initial: {exc}") from exc


def _build_pde(d: dict) -> FDSolverConfig:
    _unknown("pde", d)
    try:
        return FDSolverConfig(
            x_min=_number(d, "x_min", "pde"),
            x_max=_number(d, "x_max", "pde"),
            points=_number(d, "points", "pde", kind=int),
            dt=_number(d, "dt", "pde"),
            theta=_number(d, "theta", "pde", 0.5),
            advection=d.get("advection", "central"),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"pde: {exc}") from exc


def scenario_from_dict(raw: dict[str, Any], default_name: str = "scenario") -> Scenario:
    _unknown("", raw)
    run = raw.get("run", {})
    _unknown("run", run)
    if "t_grid" not in run:
        raise ScenarioError("run.t_grid: missing")
    t_grid = tuple(float(t) for t in run["t_grid"])
    if not t_grid or t_grid[0] <= 0 or any(b <= a for a, b in zip(t_grid, t_grid[1:])):
        raise ScenarioError("run.t_grid: must be positive and strictly increasing")
    n = _number(run, "n", "run", 200, int)
    replicas = _number(run, "replicas", "run", 5, int)
    dt = _number(run, "dt", "run", 1e-2)
    seed = _number(run, "seed", "run", 0, int)
    for key, v in (("n", n), ("replicas", replicas), ("dt", dt)):
        if not v > 0:
            raise ScenarioError(f"run.{key}: must be positive")
    if seed < 0:
        raise ScenarioError("run.seed: must be non-negative")

    pde = _build_pde(raw["pde"]) if "pde" in raw else None
    proc = raw.get("process", {})
    lower = _number(proc, "lower", "process", -INF)
    upper = _number(proc, "upper", "process", INF)
    if pde is not None:
        window = (max(pde.x_min, lower), min(pde.x_max, upper))
    else:
        window = None
    spec = _build_process(proc, t_grid[-1], window)
    initial = _build_initial(raw.get("initial", {}), spec.interval)

    lo, hi = window or spec.probe_window()
    collide_tol = _number(run, "collide_tol", "run", 1e-9 * (hi - lo))
    if collide_tol < 0:
        raise ScenarioError("run.collide_tol: must be non-negative")

    functions = []
    for k, fd in enumerate(raw.get("functions", [])):
        _unknown("functions", fd)
        label = str(fd.get("label", f"f{k}"))
        if "f" not in fd:
            raise ScenarioError(f"functions[{k}].f: missing")
        f = _expr(fd, "f", f"functions[{k}]")
        if "Af" in fd:
            af = _expr(fd, "Af", f"functions[{k}]")
        else:
            try:
                af = apply_generator(spec, f)
            except ValueError as exc:
                raise ScenarioError(f"functions[{k}].f: {exc}") from exc
        functions.append(TestFunction(label, f, af))

    return Scenario(
        name=str(raw.get("name", default_name)),
        process=spec,
        initial=initial,
        t_grid=t_grid,
        n=n,
        replicas=replicas,
        dt=dt,
        collide_tol=collide_tol,
        seed=seed,
        pde=pde,
        functions=tuple(functions),
        description=str(raw.get("description", "")),
        raw=raw,
    )


def parse_scenario(text: str, default_name: str = "scenario") -> Scenario:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"syntax error: {exc}") from exc
    return scenario_from_dict(raw, default_name)


def builtin_names() -> list[str]:
    files = resources.files(BUILTIN_PACKAGE)
    return sorted(p.name[: -len(".toml")] for p in files.iterdir() if p.name.endswith(".toml"))


def load_scenario(path_or_name: str | Path) -> Scenario:
    """Load a scenario file, or a built-in scenario by name."""
    path = Path(path_or_name)
    if path.is_file():
        text = path.read_text()
        name = path.stem
    else:
        candidate = resources.files(BUILTIN_PACKAGE) / f"{path_or_name}.toml"
        if not candidate.is_file():
            raise ScenarioError(
                f"no scenario file or built-in named {str(path_or_name)!r} (built-ins: {', '.join(builtin_names())})"
            )
        text = candidate.read_text()
        name = str(path_or_name)
    try:
        return parse_scenario(text, name)
    except ScenarioError as exc:
        raise ScenarioError(f"{path_or_name}: {exc}") from exc
