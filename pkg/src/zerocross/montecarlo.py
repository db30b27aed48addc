"""Replicated particle systems started from samples of a signed measure.

A replica draws ``n`` i.i.d. signed particles from the normalised total
variation of the initial measure, runs the annihilating system, and reports
the rescaled measure ``(|mu| / n) * exp(-kappa t) * Y_t`` at the grid times.
Replica ``r`` of seed ``s`` always uses the stream ``SeedSequence(s,
spawn_key=(r,))``, so results do not depend on scheduling.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .dynamics import ProcessSpec
from .expr import Expr
from .measures import (
    INF,
    GridFunction,
    ParticleMeasure,
    SignedAtomMeasure,
    block_signs,
    canonicalize,
    crossings,
    is_subsequence,
    sigma,
    sign_sequence,
)
from .particles import (
    ALIVE,
    InvariantViolation,
    ParticleSystemState,
    domination_holds,
    init_from_particle_measure,
    measure_Y,
    measure_Z,
    step_system,
    trajectory_rows,
)


@dataclass(frozen=True)
class InitialLaw:
    """A signed initial measure given by atoms or by a piecewise-constant density."""

    atoms: SignedAtomMeasure | None = None
    edges: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self) -> None:
        if (self.atoms is None) == (self.edges is None):
            raise ValueError("give either atoms or a piecewise density")
        if self.edges is not None:
            edges = np.asarray(self.edges, dtype=float)
            values = np.asarray(self.values, dtype=float)
            if edges.ndim != 1 or len(edges) != len(values) + 1:
                raise ValueError("density needs len(edges) == len(values) + 1")
            if not np.all(np.diff(edges) > 0) or not np.all(np.isfinite(edges)):
                raise ValueError("density edges must be finite and strictly increasing")
            if not np.all(np.isfinite(values)):
                raise ValueError("density values must be finite")
            object.__setattr__(self, "edges", edges)
            object.__setattr__(self, "values", values)
        if not self.total_variation > 0:
            raise ValueError("initial measure has zero total variation")

    @classmethod
    def from_atoms(cls, atoms, interval: tuple[float, float] = (-INF, INF)) -> InitialLaw:
        if isinstance(atoms, SignedAtomMeasure):
            return cls(atoms=atoms)
        return cls(atoms=canonicalize(atoms, 0.0, interval))

    @classmethod
    def from_density(cls, edges: Sequence[float], values: Sequence[float]) -> InitialLaw:
        return cls(edges=np.asarray(edges, dtype=float), values=np.asarray(values, dtype=float))

    @property
    def is_atomic(self) -> bool:
        return self.atoms is not None

    def cell_masses(self) -> np.ndarray:
        """Signed masses of the atoms or density cells."""
        if self.is_atomic:
            return np.asarray(self.atoms.weights)
        return self.values * np.diff(self.edges)

    @property
    def total_variation(self) -> float:
        return float(np.abs(self.cell_masses()).sum())

    @property
    def signed_mass(self) -> float:
        return float(self.cell_masses().sum())

    def crossings(self) -> int:
        return sigma(block_signs(self.cell_masses()))

    def support(self) -> tuple[float, float]:
        if self.is_atomic:
            return float(self.atoms.positions[0]), float(self.atoms.positions[-1])
        nz = np.flatnonzero(self.values)
        return float(self.edges[nz[0]]), float(self.edges[nz[-1] + 1])


def _open_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    # uniform on the open interval (0, 1)
    return (np.floor(rng.random(n) * 2.0**52) + 0.5) / 2.0**52


def sample_initial(
    law: InitialLaw,
    n: int,
    rng: np.random.Generator,
    interval: tuple[float, float] = (-INF, INF),
) -> ParticleMeasure:
    """Draw ``n`` i.i.d. signed particles with law ``|mu| / |mu|(I)``.

    The cell (or atom) is picked by inverse CDF of the cumulative masses; the
    sign is the sign of that cell.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    masses = law.cell_masses()
    cdf = np.cumsum(np.abs(masses))
    cdf /= cdf[-1]
    cell = np.searchsorted(cdf, rng.random(n), side="right")
    cell = np.minimum(cell, len(cdf) - 1)
    signs = np.sign(masses[cell]).astype(np.int8)
    if law.is_atomic:
        pos = np.asarray(law.atoms.positions)[cell]
    else:
        pos = law.edges[cell] + _open_uniform(rng, n) * np.diff(law.edges)[cell]
    return ParticleMeasure(pos, signs, None, interval)


# --------------------------------------------------------------------------
# test functions and martingales
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """A function ``f(s, x)`` together with ``A f`` for the simulated process."""

    __test__ = False  # keep pytest from collecting this class

    label: str
    f: Expr
    Af: Expr


@dataclass
class FunctionalTrace:
    """Per-step values of ``Y_t(f_t)``, ``Y_t((Af)_t)`` and the ``Z`` analogues."""

    times: list[float] = field(default_factory=list)
    y_f: list[float] = field(default_factory=list)
    y_af: list[float] = field(default_factory=list)
    z_f: list[float] = field(default_factory=list)
    z_af: list[float] = field(default_factory=list)

    def record(self, state: ParticleSystemState, fn: TestFunction, weights: np.ndarray | None = None) -> None:
        """Append one time point; ``weights`` may carry precomputed alive signs."""
        t = state.time
        live = ~np.isnan(state.live_x)
        xz = state.live_x[live]
        if weights is None:
            weights = alive_weights(state, live)
        fz = fn.f.evaluate(t, xz)
        afz = fn.Af.evaluate(t, xz)
        self.times.append(t)
        self.z_f.append(float(fz.sum()))
        self.z_af.append(float(afz.sum()))
        self.y_f.append(float(np.dot(weights, fz)))
        self.y_af.append(float(np.dot(weights, afz)))


def alive_weights(state: ParticleSystemState, live: np.ndarray | None = None) -> np.ndarray:
    """Sign of each live path if its particle is alive, else 0 (alive implies live)."""
    if live is None:
        live = ~np.isnan(state.live_x)
    return np.where(state.status[live] == ALIVE, state.sign[live], 0).astype(float)


@dataclass(frozen=True)
class MartingaleSeries:
    times: np.ndarray
    m_y: np.ndarray
    m_z: np.ndarray
    qv_y: np.ndarray  # realised quadratic variation accumulated up to each time
    qv_z: np.ndarray

    def at(self, t_grid: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        k = np.searchsorted(self.times, np.asarray(t_grid) - 1e-12)
        return self.m_y[k], self.m_z[k], self.qv_y[k], self.qv_z[k]


def martingale_from_trace(trace: FunctionalTrace) -> MartingaleSeries:
    t = np.asarray(trace.times)

    def series(v, av):
        v = np.asarray(v)
        integral = cumulative_trapezoid(np.asarray(av), t, initial=0.0)
        m = v - v[0] - integral
        qv = np.concatenate([[0.0], np.cumsum(np.diff(m) ** 2)])
        return m, qv

    m_y, qv_y = series(trace.y_f, trace.y_af)
    m_z, qv_z = series(trace.z_f, trace.z_af)
    return MartingaleSeries(t, m_y, m_z, qv_y, qv_z)


def martingale_series(history: Iterable[ParticleSystemState], f: Expr, Af: Expr) -> MartingaleSeries:
    """Martingales of ``Y`` and ``Z`` for ``f`` over a recorded list of states.

    Time integrals use the trapezoid rule on the recorded times; ``f`` is
    taken to vanish at the cemetery.
    """
    fn = TestFunction("f", f, Af)
    trace = FunctionalTrace()
    for state in history:
        trace.record(state, fn)
    return martingale_from_trace(trace)


# --------------------------------------------------------------------------
# running replicas
# --------------------------------------------------------------------------


@dataclass
class ReplicaResult:
    rep: int
    times: np.ndarray
    n_initial: int
    initial_crossings: int
    crossings: np.ndarray
    n_plus: np.ndarray  # alive + particles at each grid time
    n_minus: np.ndarray
    n_z: np.ndarray  # particles of Z inside the interval
    n_cemetery: np.ndarray
    snapshots: list[tuple[np.ndarray, np.ndarray]] | None
    martingales: dict[str, MartingaleSeries]
    step_crossings: np.ndarray | None
    violations: list[str]
    n_collisions: int
    final_state: ParticleSystemState | None = None
    trajectories: list[tuple] | None = None


def _step_plan(t_grid: Sequence[float], dt: float) -> list[tuple[int, float]]:
    """For each grid interval, the number of equal steps of size about ``dt``."""
    plan = []
    t = 0.0
    for target in t_grid:
        span = target - t
        k = max(1, int(math.ceil(span / dt - 1e-9)))
        plan.append((k, span / k))
        t = target
    return plan


def _check_step(prev_seq, seq, prev_sigma, sig, state, where: str) -> list[str]:
    bad = []
    if sig > prev_sigma:
        bad.append(f"{where}: crossings increased {prev_sigma} -> {sig}")
    if not is_subsequence(seq, prev_seq):
        bad.append(f"{where}: sign sequence is not a subsequence of the previous one")
    return bad


def run_replica(
    scenario,
    rep: int,
    *,
    n: int | None = None,
    t_grid: Sequence[float] | None = None,
    seed: int | None = None,
    check_invariants: bool = False,
    strict: bool = False,
    keep_snapshots: bool = True,
    record_steps: bool = False,
    keep_state: bool = False,
    keep_trajectories: bool = False,
) -> ReplicaResult:
    """Run one replica of ``scenario``.

    ``scenario`` supplies ``process``, ``initial``, ``dt``, ``collide_tol``,
    ``functions`` and defaults for ``n``, ``t_grid`` and ``seed``.  With
    ``check_invariants`` every step is checked for crossing monotonicity, the
    subsequence order, conservation of ``Z`` and ``|Y| <= Z``; failures are
    collected (or raised with ``strict``).  ``keep_trajectories`` logs every
    particle at every grid time.
    """
    spec: ProcessSpec = scenario.process
    n = scenario.n if n is None else n
    seed = scenario.seed if seed is None else seed
    grid = [float(t) for t in (scenario.t_grid if t_grid is None else t_grid) if t > 0]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("t_grid must be strictly increasing")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))
    nu = sample_initial(scenario.initial, n, rng, spec.interval)
    state = init_from_particle_measure(nu, spec, scenario.collide_tol)
    functions = tuple(scenario.functions or ())
    traces = {fn.label: FunctionalTrace() for fn in functions}

    times = [0.0]
    y = measure_Y(state)
    seq = sign_sequence(y) if check_invariants or record_steps else None
    sig = crossings(y)
    cross = [sig]
    counts = [(state.n_plus, state.n_minus, state.n, 0)]
    snaps = [_snapshot(state)] if keep_snapshots else None
    step_cross = [sig] if record_steps else None
    violations: list[str] = []
    def record_all():
        if functions:
            w = alive_weights(state)
            for fn in functions:
                traces[fn.label].record(state, fn, w)

    record_all()
    traj = trajectory_rows(state) if keep_trajectories else None
    where = lambda: f"seed={seed} rep={rep} t={state.time:.6g}"  # noqa: E731

    for k_steps, h in _step_plan(grid, scenario.dt):
        for _ in range(k_steps):
            step_system(state, h, rng)
            record_all()
            if check_invariants or record_steps:
                y = measure_Y(state)
                new_seq = sign_sequence(y)
                new_sig = sigma(new_seq)
                if check_invariants:
                    bad = _check_step(seq, new_seq, sig, new_sig, state, where())
                    bad += _check_measures(state, y, where())
                    if bad and strict:
                        raise InvariantViolation("; ".join(bad))
                    violations += bad
                seq, sig = new_seq, new_sig
                if record_steps:
                    step_cross.append(new_sig)
        y = measure_Y(state)
        sig = crossings(y)
        times.append(state.time)
        cross.append(sig)
        z_in = int(np.sum(~np.isnan(state.live_x)))
        alive = state.status == ALIVE
        counts.append(
            (
                int(np.sum(alive & (state.sign > 0))),
                int(np.sum(alive & (state.sign < 0))),
                z_in,
                state.n - z_in,
            )
        )
        if keep_snapshots:
            snaps.append(_snapshot(state))
        if keep_trajectories:
            traj += trajectory_rows(state)
    cnt = np.array(counts, dtype=np.int64).reshape(-1, 4)
    cross_arr = np.array(cross)
    if check_invariants and np.any(np.diff(cross_arr) > 0):
        violations.append(f"seed={seed} rep={rep}: grid crossing series increased {cross_arr.tolist()}")
    return ReplicaResult(
        rep=rep,
        times=np.array(times),
        n_initial=n,
        initial_crossings=crossings(nu),
        crossings=cross_arr,
        n_plus=cnt[:, 0],
        n_minus=cnt[:, 1],
        n_z=cnt[:, 2],
        n_cemetery=cnt[:, 3],
        snapshots=snaps,
        martingales={label: martingale_from_trace(tr) for label, tr in traces.items()},
        step_crossings=None if step_cross is None else np.array(step_cross),
        violations=violations,
        n_collisions=len(state.collisions),
        final_state=state if keep_state else None,
        trajectories=traj,
    )


def classify_violations(violations: Iterable[str]) -> dict[str, list[str]]:
    """Split violation messages into crossing order, subsequence and conservation."""
    kinds: dict[str, list[str]] = {"monotone": [], "subsequence": [], "conservation": []}
    for v in violations:
        if "crossing" in v:
            kinds["monotone"].append(v)
        elif "subsequence" in v:
            kinds["subsequence"].append(v)
        else:
            kinds["conservation"].append(v)
    return kinds


def _snapshot(state: ParticleSystemState) -> tuple[np.ndarray, np.ndarray]:
    alive = state.status == ALIVE
    return state.live_x[alive].copy(), state.sign[alive].copy()


def _check_measures(state: ParticleSystemState, y: ParticleMeasure, where: str) -> list[str]:
    bad = []
    z = measure_Z(state)
    total = int(round(float(z.weights.sum()) + z.cemetery_mass))
    if total != state.n:
        bad.append(f"{where}: Z total {total} != {state.n}")
    if not domination_holds(y.to_atom_measure(), z):
        bad.append(f"{where}: |Y| <= Z fails")
    for rec in state.collisions[-5:]:
        if len(rec.removed_plus) != len(rec.removed_minus) or not rec.removed_plus:
            bad.append(f"{where}: unbalanced annihilation at {rec.location}")
    return bad


@dataclass
class EnsembleResult:
    """Replicas of one scenario plus what is needed to reproduce them."""

    name: str
    seed: int
    n: int
    times: np.ndarray
    total_variation: float
    mu_crossings: int
    spec: ProcessSpec
    replicas: list[ReplicaResult]

    @property
    def reps(self) -> int:
        return len(self.replicas)

    def scale(self, t: float) -> float:
        """Factor turning particle counts into the reported measure at time ``t``."""
        return self.total_variation / self.n * float(self.spec.output_scale(t))

    def crossings(self) -> np.ndarray:
        return np.array([r.crossings for r in self.replicas])

    def time_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a recorded time")
        return k

    def summary_rows(self) -> list[tuple]:
        rows = []
        for r in self.replicas:
            for k, t in enumerate(self.times):
                c = self.scale(t)
                rows.append(
                    (
                        float(t),
                        r.rep,
                        int(r.crossings[k]),
                        c * int(r.n_plus[k]),
                        c * int(r.n_minus[k]),
                        c * int(r.n_z[k]),
                        c * int(r.n_cemetery[k]),
                    )
                )
        return rows

    def violations(self) -> list[str]:
        return [v for r in self.replicas for v in r.violations]


def run_ensemble(
    scenario,
    n: int | None = None,
    reps: int | None = None,
    t_grid: Sequence[float] | None = None,
    seed: int | None = None,
    map_fn: Callable = map,
    **replica_kwargs,
) -> EnsembleResult:
    """Run ``reps`` independent replicas; ``map_fn`` may be a pool's ``map``."""
    n = scenario.n if n is None else n
    reps = scenario.replicas if reps is None else reps
    seed = scenario.seed if seed is None else seed
    grid = [float(t) for t in (scenario.t_grid if t_grid is None else t_grid)]
    job = partial(run_replica, scenario, n=n, t_grid=grid, seed=seed, **replica_kwargs)
    replicas = list(map_fn(job, range(reps)))
    times = replicas[0].times if replicas else np.array([0.0] + [t for t in grid if t > 0])
    return EnsembleResult(
        name=getattr(scenario, "name", "scenario"),
        seed=seed,
        n=n,
        times=times,
        total_variation=scenario.initial.total_variation,
        mu_crossings=scenario.initial.crossings(),
        spec=scenario.process,
        replicas=replicas,
    )


# --------------------------------------------------------------------------
# estimators
# --------------------------------------------------------------------------


def replica_functionals(result: EnsembleResult, t: float, f: Expr) -> np.ndarray:
    """``Ytilde_t(f)`` for every replica."""
    k = result.time_index(t)
    scale = result.scale(result.times[k])
    out = []
    for r in result.replicas:
        if r.snapshots is None:
            raise ValueError("replicas were run without snapshots")
        pos, sg = r.snapshots[k]
        out.append(scale * float(np.dot(sg.astype(float), f.evaluate(result.times[k], pos))))
    return np.array(out)


def estimate_pushforward(result: EnsembleResult, t: float, f: Expr) -> tuple[float, float]:
    """Mean and standard error of ``Ytilde_t(f)``.

    Across replicas when there are at least two; with a single replica the
    standard error comes from the spread of the individual particle terms.
    """
    vals = replica_functionals(result, t, f)
    if len(vals) >= 2:
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))
    k = result.time_index(t)
    pos, sg = result.replicas[0].snapshots[k]
    terms = result.scale(result.times[k]) * result.n * sg * f.evaluate(result.times[k], pos)
    terms = np.concatenate([terms, np.zeros(result.n - len(terms))])
    return float(vals[0]), float(terms.std(ddof=1) / math.sqrt(result.n))


def empirical_signed_density(
    result: EnsembleResult,
    t: float,
    bin_width: float,
    lo: float | None = None,
    hi: float | None = None,
) -> GridFunction:
    """Replica-averaged signed histogram of ``Ytilde_t`` per unit length."""
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    k = result.time_index(t)
    if lo is None or hi is None:
        allpos = np.concatenate([r.snapshots[k][0] for r in result.replicas] + [np.zeros(1)])
        lo = float(allpos.min()) if lo is None else lo
        hi = float(allpos.max()) + bin_width if hi is None else hi
    nbins = max(1, int(math.ceil((hi - lo) / bin_width - 1e-9)))
    edges = lo + bin_width * np.arange(nbins + 1)
    acc = np.zeros(nbins)
    for r in result.replicas:
        pos, sg = r.snapshots[k]
        h, _ = np.histogram(pos, bins=edges, weights=sg.astype(float))
        acc += h
    acc *= result.scale(result.times[k]) / (result.reps * bin_width)
    return GridFunction(lo + 0.5 * bin_width, bin_width, acc, float(result.times[k]))
