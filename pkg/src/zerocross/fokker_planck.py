"""Theta-scheme finite differences for the forward (Fokker-Planck) equation

    u_s = 1/2 (alpha u)_xx - (beta u)_x + gamma u

on a uniform grid with zero Dirichlet values at both ends (mass reaching the
boundary is absorbed).  The second derivative acts on ``alpha * u`` and the
first derivative on the flux ``beta * u``, so summing the scheme over the grid
telescopes to boundary fluxes plus the killing term.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .dynamics import ProcessSpec
from .expr import Const, sub
from .measures import GridFunction, grid_crossings


class StabilityError(ValueError):
    pass


class SingularSystemError(ArithmeticError):
    pass


@dataclass(frozen=True)
class FDSolverConfig:
    x_min: float
    x_max: float
    points: int
    dt: float
    theta: float = 0.5
    advection: str = "central"
    enforce_stability: bool = False

    def __post_init__(self) -> None:
        if self.points < 3:
            raise ValueError("need at least 3 grid points")
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be below x_max")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.advection not in ("central", "upwind"):
            raise ValueError("advection must be 'central' or 'upwind'")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.points - 1)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.points)

    def empty(self, time: float = 0.0) -> GridFunction:
        return GridFunction(self.x_min, self.dx, np.zeros(self.points), time)


# --------------------------------------------------------------------------
# initial data
# --------------------------------------------------------------------------


def discrete_delta(config: FDSolverConfig, atoms: Sequence[tuple[float, float]]) -> GridFunction:
    """Each atom becomes ``weight / dx`` at its nearest interior node."""
    u = np.zeros(config.points)
    for pos, w in atoms:
        k = int(round((pos - config.x_min) / config.dx))
        if not 1 <= k <= config.points - 2:
            raise ValueError(f"atom at {pos} is not inside the grid interior")
        u[k] += w / config.dx
    return GridFunction(config.x_min, config.dx, u, 0.0)


def density_on_grid(config: FDSolverConfig, edges: Sequence[float], values: Sequence[float]) -> GridFunction:
    """Average a piecewise-constant density over each node's control volume."""
    edges = np.asarray(edges, dtype=float)
    values = np.asarray(values, dtype=float)
    x = config.x
    h = config.dx
    left, right = x - 0.5 * h, x + 0.5 * h
    u = np.zeros(config.points)
    for a, b, v in zip(edges[:-1], edges[1:], values):
        overlap = np.clip(np.minimum(right, b) - np.maximum(left, a), 0.0, None)
        u += v * overlap / h
    u[0] = u[-1] = 0.0
    return GridFunction(config.x_min, h, u, 0.0)


def initial_grid(law, config: FDSolverConfig) -> GridFunction:
    if law.is_atomic:
        return discrete_delta(config, law.atoms.atoms)
    return density_on_grid(config, law.edges, law.values)


# --------------------------------------------------------------------------
# operator assembly
# --------------------------------------------------------------------------


def _coefficients(spec: ProcessSpec, t: float, x: np.ndarray, gamma):
    a = spec.alpha.evaluate(t, x)
    b = spec.beta.evaluate(t, x)
    g = gamma.evaluate(t, x)
    return a, b, g


def _operator_bands(a, b, g, dx: float, advection: str) -> np.ndarray:
    """Tridiagonal bands (upper, diag, lower) acting on the interior nodes."""
    m = len(a)
    inner = slice(1, m - 1)
    upper = np.zeros(m)  # coefficient of u[i+1] in row i
    diag = np.zeros(m)
    lower = np.zeros(m)  # coefficient of u[i-1] in row i
    c = 0.5 / dx**2
    upper[inner] += c * a[2:]
    diag[inner] += -2.0 * c * a[1:-1]
    lower[inner] += c * a[:-2]
    if advection == "central":
        upper[inner] += -b[2:] / (2 * dx)
        lower[inner] += b[:-2] / (2 * dx)
    else:
        bf = 0.5 * (b[:-1] + b[1:])  # face i+1/2 between nodes i and i+1
        bp, bm = np.maximum(bf, 0.0), np.minimum(bf, 0.0)
        # -(F_{i+1/2} - F_{i-1/2}) / dx, F = b+ u_left + b- u_right
        diag[inner] += -(bp[1:] - bm[:-1]) / dx
        upper[inner] += -bm[1:] / dx
        lower[inner] += bp[:-1] / dx
    diag[inner] += g[1:-1]
    return np.vstack([upper, diag, lower])[:, inner]


def _apply(bands: np.ndarray, u_inner: np.ndarray) -> np.ndarray:
    upper, diag, lower = bands
    out = diag * u_inner
    out[:-1] += upper[:-1] * u_inner[1:]
    out[1:] += lower[1:] * u_inner[:-1]
    return out


def _to_banded_matrix(bands: np.ndarray, factor: float) -> np.ndarray:
    """``I - factor * L`` in the layout expected by ``solve_banded((1, 1), ...)``."""
    upper, diag, lower = bands
    ab = np.zeros((3, len(diag)))
    ab[0, 1:] = -factor * upper[:-1]
    ab[1, :] = 1.0 - factor * diag
    ab[2, :-1] = -factor * lower[1:]
    return ab


def stable_dt(spec: ProcessSpec, config: FDSolverConfig, t: float = 0.0) -> float:
    amax = float(np.max(spec.alpha.evaluate(t, config.x)))
    return math.inf if amax <= 0 else config.dx**2 / amax


def solve_forward(
    spec: ProcessSpec,
    u0: GridFunction,
    t_end: float,
    config: FDSolverConfig,
    times: Sequence[float] | None = None,
) -> list[GridFunction]:
    """Integrate the forward equation and return snapshots.

    Snapshots are taken at ``0``, at every entry of ``times`` and at
    ``t_end``.  A shift ``kappa`` recorded on ``spec`` is integrated exactly
    as the scalar factor ``exp(kappa * dt)`` per step and then undone, so the
    output always solves the unshifted equation.
    """
    if not spec.is_diffusion:
        raise ValueError("the forward solver needs a diffusion")
    if len(u0.values) != config.points or abs(u0.x0 - config.x_min) > 1e-12 * max(1.0, abs(config.x_min)) or not math.isclose(u0.dx, config.dx, rel_tol=1e-12):
        raise ValueError("initial data is not on the solver grid")
    if config.theta < 0.5:
        limit = stable_dt(spec, config)
        if config.dt > limit:
            msg = f"explicit part unstable: dt={config.dt:g} > dx^2/max(alpha)={limit:g}"
            if config.enforce_stability:
                raise StabilityError(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    stops = sorted({float(t) for t in (times or []) if 0 < t < t_end} | {float(t_end)})
    x = config.x
    dx = config.dx
    theta = config.theta
    kappa = spec.kappa
    gamma = sub(spec.gamma, Const(kappa)) if kappa else spec.gamma
    time_dependent = any(e.depends_on("s") for e in (spec.alpha, spec.beta, gamma))

    u = np.array(u0.values, dtype=float)
    u[0] = u[-1] = 0.0
    t = 0.0
    out = [GridFunction(config.x_min, dx, u.copy(), 0.0)]
    cache: dict[float, np.ndarray] = {}

    def bands_at(s: float) -> np.ndarray:
        key = 0.0 if not time_dependent else s
        if key not in cache:
            if len(cache) > 2:
                cache.clear()
            cache[key] = _operator_bands(*_coefficients(spec, key, x, gamma), dx, config.advection)
        return cache[key]

    for stop in stops:
        span = stop - t
        k = max(1, int(math.ceil(span / config.dt - 1e-9)))
        h = span / k
        for _ in range(k):
            inner = u[1:-1]
            rhs = inner + (1.0 - theta) * h * _apply(bands_at(t), inner) if theta < 1 else inner.copy()
            if theta > 0:
                ab = _to_banded_matrix(bands_at(t + h), theta * h)
                try:
                    new = solve_banded((1, 1), ab, rhs)
                except (LinAlgError, ValueError) as exc:
                    raise SingularSystemError(f"linear solve failed at t={t + h:g}") from exc
            else:
                new = rhs
            if not np.all(np.isfinite(new)):
                raise SingularSystemError(f"non-finite solution at t={t + h:g}")
            u[1:-1] = new
            t += h
        out.append(GridFunction(config.x_min, dx, u.copy(), stop))
    return out


def crossing_series(series: Sequence[GridFunction], zero_tol: float = 0.0) -> list[int]:
    return [grid_crossings(g, zero_tol) for g in series]


def _boundary_outflow(u, a, b, dx: float, advection: str) -> float:
    """Rate at which mass leaves through the two Dirichlet ends."""
    diffusive = 0.5 * (a[1] * u[1] + a[-2] * u[-2]) / dx
    if advection == "central":
        advective = 0.5 * (b[-2] * u[-2] - b[1] * u[1])
    else:
        right_face = 0.5 * (b[-2] + b[-1])
        left_face = 0.5 * (b[0] + b[1])
        advective = max(right_face, 0.0) * u[-2] - min(left_face, 0.0) * u[1]
    return float(diffusive + advective)


def mass_balance(series: Sequence[GridFunction], spec: ProcessSpec, config: FDSolverConfig) -> np.ndarray:
    """Discrete residual of ``d/dt int u = int gamma u - outflow`` between snapshots.

    Meant for series recorded at every step or at a fixed stride; each entry
    compares the mass change over one interval with the theta-weighted source.
    """
    x = config.x
    dx = config.dx
    theta = config.theta
    gamma = sub(spec.gamma, Const(spec.kappa)) if spec.kappa else spec.gamma
    res = []
    for g0, g1 in zip(series[:-1], series[1:]):
        h = g1.time - g0.time

        def source(g: GridFunction) -> float:
            a, b, gm = _coefficients(spec, g.time, x, gamma)
            u = np.asarray(g.values)
            return float(np.sum(gm * u) * dx) - _boundary_outflow(u, a, b, dx, config.advection)

        change = (g1.integral() - g0.integral()) / h
        res.append(change - (theta * source(g1) + (1.0 - theta) * source(g0)))
    return np.array(res)


def solve_every_step(
    spec: ProcessSpec, u0: GridFunction, t_end: float, config: FDSolverConfig
) -> list[GridFunction]:
    """Snapshots after every time step (for mass balance diagnostics)."""
    n = max(1, int(math.ceil(t_end / config.dt - 1e-9)))
    times = [t_end * (k + 1) / n for k in range(n)]
    return solve_forward(spec, u0, t_end, config, times)
