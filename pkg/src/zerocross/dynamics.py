"""One-dimensional diffusions with killing and the nearest-neighbour jump walk.

A diffusion is described by forward coefficients ``alpha`` (variance rate),
``beta`` (drift) and ``gamma`` (killing potential, non-positive), all
expressions in ``(s, x)``.  Positions that leave the open state interval or
are killed go to the cemetery, encoded as ``NaN``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .expr import Const, Expr, add, diff_expr, mul, parse_expr, sub
from .measures import INF, SignedAtomMeasure, canonicalize

DIFFUSION = "diffusion"
JUMP_WALK = "jump_walk"

PROBE_POINTS = 201
DEFAULT_PROBE_HALFWIDTH = 10.0


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ProcessSpec:
    """Dynamics of a single particle.

    ``kappa`` records a constant already added to ``gamma``; measures produced
    under this spec are multiplied by ``exp(-kappa * s)`` on output.
    """

    kind: str = DIFFUSION
    alpha: Expr = Const(1.0)
    beta: Expr = Const(0.0)
    gamma: Expr = Const(0.0)
    lower: float = -INF
    upper: float = INF
    kappa: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in (DIFFUSION, JUMP_WALK):
            raise ConfigurationError(f"unknown process kind {self.kind!r}")
        if not self.lower < self.upper:
            raise ConfigurationError("process interval must satisfy lower < upper")
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not isinstance(value, Expr):
                object.__setattr__(self, name, parse_expr(value))

    @property
    def interval(self) -> tuple[float, float]:
        return (self.lower, self.upper)

    @property
    def is_diffusion(self) -> bool:
        return self.kind == DIFFUSION

    def output_scale(self, s) -> np.ndarray | float:
        """Factor that maps simulated measures back to the unshifted problem."""
        return np.exp(-self.kappa * np.asarray(s, dtype=float))

    def probe_window(self, halfwidth: float = DEFAULT_PROBE_HALFWIDTH) -> tuple[float, float]:
        lo = self.lower if math.isfinite(self.lower) else min(-halfwidth, self.upper - 2 * halfwidth)
        hi = self.upper if math.isfinite(self.upper) else max(halfwidth, self.lower + 2 * halfwidth)
        return lo, hi


def jump_walk() -> ProcessSpec:
    return ProcessSpec(kind=JUMP_WALK)


def check_coefficients(
    spec: ProcessSpec,
    t_end: float,
    x_window: tuple[float, float] | None = None,
    points: int = PROBE_POINTS,
) -> None:
    """Reject specs with ``alpha < 0`` or ``gamma > 0`` on a dense space-time grid.

    Raises
    ------
    ConfigurationError
        Naming the offending coefficient and one witness point.
    """
    if not spec.is_diffusion:
        return
    lo, hi = x_window if x_window is not None else spec.probe_window()
    s = np.linspace(0.0, max(float(t_end), 0.0), points)
    x = np.linspace(lo, hi, points)
    S, X = np.meshgrid(s, x, indexing="ij")
    a = spec.alpha.evaluate(S, X)
    g = spec.gamma.evaluate(S, X)
    for name, vals, bad in (("alpha", a, a < 0), ("gamma", g, g > 0)):
        if np.any(~np.isfinite(vals)):
            raise ConfigurationError(f"{name} is not finite on the probe grid")
        if np.any(bad):
            k = np.flatnonzero(bad.ravel())[0]
            rel = "≥ 0" if name == "alpha" else "≤ 0"
            raise ConfigurationError(
                f"{name} must be {rel}: {name}(s={S.ravel()[k]:.6g}, x={X.ravel()[k]:.6g}) = {vals.ravel()[k]:.6g}"
            )


def transform_backward_to_forward(a: Expr, b: Expr, c: Expr) -> tuple[Expr, Expr, Expr]:
    """Forward-equation coefficients for ``u_s = (a/2) u_xx + b u_x + c u``.

    Returns ``alpha = a``, ``beta = a_x - b`` and
    ``gamma = a_xx / 2 - b_x + c``.
    """
    a_x = diff_expr(a, "x")
    alpha = a
    beta = sub(a_x, b)
    gamma = add(sub(mul(Const(0.5), diff_expr(a_x, "x")), diff_expr(b, "x")), c)
    return alpha, beta, gamma


def apply_kappa_shift(
    spec: ProcessSpec,
    kappa: float,
    t_end: float = 1.0,
    x_window: tuple[float, float] | None = None,
) -> ProcessSpec:
    """Replace ``gamma`` by ``gamma + kappa`` and record the shift."""
    shifted = replace(spec, gamma=add(spec.gamma, Const(float(kappa))), kappa=spec.kappa + float(kappa))
    check_coefficients(shifted, t_end, x_window)
    return shifted


def apply_generator(spec: ProcessSpec, f: Expr) -> Expr:
    """``f_s + (alpha/2) f_xx + beta f_x + gamma f`` for a smooth test function."""
    if not spec.is_diffusion:
        raise ConfigurationError("the generator is only available in closed form for diffusions")
    f_x = diff_expr(f, "x")
    f_xx = diff_expr(f_x, "x")
    out = diff_expr(f, "s")
    out = add(out, mul(mul(Const(0.5), spec.alpha), f_xx))
    out = add(out, mul(spec.beta, f_x))
    return add(out, mul(spec.gamma, f))


# --------------------------------------------------------------------------
# stepping
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PathState:
    position: float  # NaN is the cemetery
    time: float = 0.0

    @property
    def dead(self) -> bool:
        return math.isnan(self.position)


def advance(
    x: np.ndarray,
    t: float,
    dt: float,
    gaussian: np.ndarray,
    uniform: np.ndarray,
    spec: ProcessSpec,
) -> np.ndarray:
    """One Euler-Maruyama step with killing for an array of live positions.

    Killed or exited positions come back as ``NaN``.  Coefficients are frozen
    at ``(t, x)``.
    """
    x = np.asarray(x, dtype=float)
    a = np.maximum(spec.alpha.evaluate(t, x), 0.0)
    b = spec.beta.evaluate(t, x)
    g = spec.gamma.evaluate(t, x)
    out = x + b * dt + np.sqrt(a * dt) * gaussian
    killed = uniform < -np.expm1(g * dt)
    exited = (out <= spec.lower) | (out >= spec.upper)
    return np.where(killed | exited | np.isnan(x), np.nan, out)


def euler_step(p: PathState, dt: float, gaussian_draw: float, uniform_draw: float, spec: ProcessSpec) -> PathState:
    if p.dead:
        raise ValueError("cannot step a path that is already in the cemetery")
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = advance(np.array([p.position]), p.time, dt, np.array([gaussian_draw]), np.array([uniform_draw]), spec)
    return PathState(float(x[0]), p.time + dt)


def jump_increments(n_events: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Net displacement after ``n_events`` equiprobable ±1 jumps."""
    return 2 * rng.binomial(n_events, 0.5) - n_events


def jump_step(p: PathState, t_end: float, rng: np.random.Generator) -> list[tuple[float, float]]:
    """Exact event-driven path of the jump walk from ``p`` up to ``t_end``.

    Returns ``[(time, position), ...]`` starting with the initial point; one
    entry per jump.
    """
    if p.dead:
        raise ValueError("cannot step a path that is already in the cemetery")
    path = [(p.time, p.position)]
    t, x = p.time, p.position
    while True:
        t += rng.exponential(1.0)
        if t > t_end:
            return path
        x += 1.0 if rng.random() < 0.5 else -1.0
        path.append((t, x))


# --------------------------------------------------------------------------
# exact law of the jump walk
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class JumpDistribution:
    measure: SignedAtomMeasure
    leak: float
    probabilities: np.ndarray
    sites: np.ndarray


def exact_jump_distribution(x0: float, t: float, K: int, tail_tol: float = 1e-17) -> JumpDistribution:
    """Law at time ``t`` of the rate-1 ±1 walk from ``x0`` on ``x0 + {-K..K}``.

    Computed by uniformization: the walk jumps at the events of a unit-rate
    Poisson clock, so the law is a Poisson mixture of powers of the one-jump
    kernel.  Mass that either steps outside the window or sits in the
    neglected Poisson tail is reported as ``leak``.
    """
    if K < 1:
        raise ValueError("truncation radius K must be at least 1")
    if t < 0:
        raise ValueError("t must be non-negative")
    size = 2 * K + 1
    v = np.zeros(size)
    v[K] = 1.0
    p = np.zeros(size)
    leak = 0.0
    missing = 0.0  # mass of the k-jump kernel that has left the window
    k = 0
    weight = math.exp(-t)
    while True:
        p += weight * v
        leak += weight * missing
        if k >= t and weight < tail_tol:
            break
        missing += 0.5 * (v[0] + v[-1])
        nxt = np.zeros(size)
        nxt[1:] += 0.5 * v[:-1]
        nxt[:-1] += 0.5 * v[1:]
        v = nxt
        k += 1
        weight *= t / k
    leak += float(stats.poisson.sf(k, t)) if t > 0 else 0.0
    sites = x0 + np.arange(-K, K + 1, dtype=float)
    keep = p > 0
    mu = canonicalize(np.column_stack([sites[keep], p[keep]]))
    return JumpDistribution(mu, leak, p, sites)


