"""Signed particles that move independently and annihilate in opposite pairs.

Every particle has two positions:

* ``live_x`` follows the unstopped path and never stops (it drives ``Z``),
* ``frozen_x`` is the path stopped at the annihilation time (it drives ``Y``
  in the frozen representation, where removed pairs sit on top of each other
  and cancel).

Within one time step each path is read as the straight segment between its
endpoints.  Opposite-signed alive particles whose segments cross, or that lie
within ``collide_tol`` of each other at either end of the step, are
annihilated in order of the interpolated meeting time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ProcessSpec, advance, jump_increments
from .measures import ParticleMeasure, SignedAtomMeasure, canonicalize

ALIVE = 0
ANNIHILATED = 1
CEMETERY = 2

STATUS_NAMES = {ALIVE: "alive", ANNIHILATED: "annihilated", CEMETERY: "cemetery"}

# sub-step times closer than this (as a fraction of dt) count as simultaneous
SIMULTANEOUS_FRACTION = 1e-12
_PAIR_CHUNK = 2_000_000


class InvariantViolation(RuntimeError):
    pass


class MalformedClusterError(RuntimeError):
    pass


@dataclass(frozen=True)
class CollisionRecord:
    time: float
    location: float
    removed_plus: tuple[int, ...]
    removed_minus: tuple[int, ...]


@dataclass
class ParticleSystemState:
    """Mutable state of one particle system.

    ``index`` is the 1-based rank of a particle within its sign class, assigned
    by initial position.
    """

    spec: ProcessSpec
    sign: np.ndarray
    index: np.ndarray
    live_x: np.ndarray
    frozen_x: np.ndarray
    tau: np.ndarray
    status: np.ndarray
    time: float = 0.0
    collide_tol: float = 1e-9
    collisions: list[CollisionRecord] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.sign)

    @property
    def n_plus(self) -> int:
        return int(np.sum(self.sign > 0))

    @property
    def n_minus(self) -> int:
        return int(np.sum(self.sign < 0))

    def alive(self) -> np.ndarray:
        return self.status == ALIVE

    def copy(self) -> ParticleSystemState:
        return ParticleSystemState(
            self.spec,
            self.sign.copy(),
            self.index.copy(),
            self.live_x.copy(),
            self.frozen_x.copy(),
            self.tau.copy(),
            self.status.copy(),
            self.time,
            self.collide_tol,
            list(self.collisions),
        )

    def particle_id(self, sign: int, index: int) -> int:
        hits = np.flatnonzero((self.sign == sign) & (self.index == index))
        return int(hits[0])


def init_from_particle_measure(
    nu: ParticleMeasure,
    spec: ProcessSpec,
    collide_tol: float = 1e-9,
    rng: np.random.Generator | None = None,
) -> ParticleSystemState:
    """One particle per unit atom of ``nu``; cemetery entries are ignored."""
    del rng  # the construction is deterministic
    if not nu.is_canonical():
        raise ValueError("initial particle measure has coincident opposite-signed particles")
    live = nu.in_interval
    pos = nu.positions[live]
    sg = nu.signs[live].astype(np.int8)
    ids = nu.ids[live]
    order = np.lexsort((ids, pos))
    pos, sg = pos[order], sg[order]
    index = np.zeros(len(pos), dtype=np.int64)
    for s in (1, -1):
        mask = sg == s
        index[mask] = np.arange(1, int(mask.sum()) + 1)
    n = len(pos)
    return ParticleSystemState(
        spec=spec,
        sign=sg,
        index=index,
        live_x=pos.astype(float).copy(),
        frozen_x=pos.astype(float).copy(),
        tau=np.full(n, np.inf),
        status=np.full(n, ALIVE, dtype=np.int8),
        collide_tol=float(collide_tol),
    )


# --------------------------------------------------------------------------
# collision detection and resolution
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Crossings:
    """Flagged opposite-signed pairs of one step (``plus``/``minus`` are particle ids)."""

    plus: np.ndarray
    minus: np.ndarray
    subtime: np.ndarray
    location: np.ndarray

    def __len__(self) -> int:
        return len(self.plus)


def _empty_crossings() -> Crossings:
    e = np.zeros(0, dtype=np.int64)
    f = np.zeros(0)
    return Crossings(e, e, f, f)


def _candidate_pairs(prev, nxt, plus, minus, collide_tol):
    """Yield (plus ids, minus ids) whose start positions are close enough to meet."""
    disp = np.abs(nxt - prev)
    order = np.argsort(prev[minus], kind="stable")
    m_sorted = minus[order]
    m_prev = prev[m_sorted]
    reach = float(disp[minus].max()) + collide_tol
    p_prev = prev[plus]
    lo = np.searchsorted(m_prev, p_prev - disp[plus] - reach, side="left")
    hi = np.searchsorted(m_prev, p_prev + disp[plus] + reach, side="right")
    counts = hi - lo
    has = counts > 0
    plus, lo, counts = plus[has], lo[has], counts[has]
    if len(plus) == 0:
        return
    cum = np.cumsum(counts)
    start = 0
    while start < len(plus):
        base = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, base + _PAIR_CHUNK, side="right"))
        stop = max(stop, start + 1)
        c = counts[start:stop]
        total = int(c.sum())
        i = np.repeat(plus[start:stop], c)
        first = np.repeat(lo[start:stop] - (np.cumsum(c) - c), c)
        j = m_sorted[first + np.arange(total)]
        yield i, j
        start = stop


def detect_crossings(
    prev: np.ndarray,
    nxt: np.ndarray,
    signs: np.ndarray,
    alive: np.ndarray,
    dt: float,
    collide_tol: float,
    mode: str = "continuous",
) -> Crossings:
    """Find the (+, -) alive pairs that meet during a step.

    A pair is flagged when its position difference changes sign across the
    step or is within ``collide_tol`` at either end.  The meeting sub-time (in
    ``[0, dt]``) and location come from linear interpolation of both paths.
    With ``mode="jump"`` paths are piecewise constant and only proximity at
    the end of the step counts.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    prev = np.asarray(prev, dtype=float)
    nxt = np.asarray(nxt, dtype=float)
    ids = np.flatnonzero(alive)
    plus = ids[signs[ids] > 0]
    minus = ids[signs[ids] < 0]
    if len(plus) == 0 or len(minus) == 0:
        return _empty_crossings()
    out_i, out_j, out_t, out_x = [], [], [], []
    for i, j in _candidate_pairs(prev, nxt, plus, minus, collide_tol):
        d0 = prev[i] - prev[j]
        d1 = nxt[i] - nxt[j]
        near0 = np.abs(d0) <= collide_tol
        near1 = np.abs(d1) <= collide_tol
        if mode == "jump":
            flagged = near1
            swapped = np.zeros_like(flagged)
        else:
            swapped = (d0 * d1 < 0) & ~near0
            flagged = near0 | swapped | near1
        if not flagged.any():
            continue
        i, j, d0, d1 = i[flagged], j[flagged], d0[flagged], d1[flagged]
        near0, swapped = near0[flagged], swapped[flagged]
        theta = np.where(near0, 0.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            theta = np.where(swapped, d0 / (d0 - d1), theta)
        loc_cross = prev[i] + theta * (nxt[i] - prev[i])
        loc = np.where(
            swapped,
            loc_cross,
            np.where(near0, 0.5 * (prev[i] + prev[j]), 0.5 * (nxt[i] + nxt[j])),
        )
        if mode == "jump":
            theta = np.ones_like(theta)
        out_i.append(i)
        out_j.append(j)
        out_t.append(theta * dt)
        out_x.append(loc)
    if not out_i:
        return _empty_crossings()
    return Crossings(np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_t), np.concatenate(out_x))


def resolve_collision_cluster(
    j_plus: set[int],
    j_minus: set[int],
    clusters: list[tuple[float, set[int], set[int]]],
) -> tuple[set[int], set[int], list[tuple[float, tuple[int, ...], tuple[int, ...]]]]:
    """Annihilate ``min(#K+, #K-)`` particles of each sign at every meeting point.

    ``clusters`` lists ``(location, K_plus, K_minus)`` with indices taken from
    ``j_plus``/``j_minus``.  The largest indices of each class are removed.
    Returns the surviving index sets and one removal record per cluster.
    """
    j_plus, j_minus = set(j_plus), set(j_minus)
    used_p: set[int] = set()
    used_m: set[int] = set()
    records = []
    for location, k_plus, k_minus in clusters:
        if not k_plus or not k_minus:
            raise MalformedClusterError(f"one-signed collision cluster at {location}")
        if not (k_plus <= j_plus and k_minus <= j_minus):
            raise MalformedClusterError("collision cluster lists particles that are not alive")
        if used_p & k_plus or used_m & k_minus:
            raise MalformedClusterError("collision clusters overlap")
        used_p |= k_plus
        used_m |= k_minus
        g = min(len(k_plus), len(k_minus))
        removed_p = tuple(sorted(k_plus)[-g:])
        removed_m = tuple(sorted(k_minus)[-g:])
        records.append((location, removed_p, removed_m))
    for _, rp, rm in records:
        j_plus.difference_update(rp)
        j_minus.difference_update(rm)
    return j_plus, j_minus, records


def _clusters_in_time_order(events: Crossings, dt: float, collide_tol: float):
    """Group events into clusters of simultaneous meetings at one location."""
    order = np.lexsort((events.location, events.subtime))
    t = events.subtime[order]
    x = events.location[order]
    new_time = np.ones(len(order), dtype=bool)
    new_time[1:] = np.diff(t) > SIMULTANEOUS_FRACTION * dt
    time_groups = np.split(np.arange(len(order)), np.flatnonzero(new_time)[1:])
    for grp in time_groups:
        if len(grp) == 1:
            yield float(t[grp[0]]), [order[grp[0]]]
            continue
        g_sorted = grp[np.argsort(x[grp], kind="stable")]
        gx = x[g_sorted]
        breaks = np.flatnonzero(np.diff(gx) > collide_tol) + 1
        for part in np.split(g_sorted, breaks):
            yield float(np.mean(t[part])), [int(k) for k in order[part]]


def resolve_step_collisions(state: ParticleSystemState, events: Crossings, t0: float, dt: float) -> int:
    """Process flagged pairs in time order; returns the number of clusters resolved."""
    if len(events) == 0:
        return 0
    plus_ids = events.plus.tolist()
    minus_ids = events.minus.tolist()
    locs = events.location.tolist()
    status = state.status
    resolved = 0
    for subtime, members in _clusters_in_time_order(events, dt, state.collide_tol):
        live = [k for k in members if status[plus_ids[k]] == ALIVE and status[minus_ids[k]] == ALIVE]
        if not live:
            continue
        k_plus = {int(state.index[plus_ids[k]]) for k in live}
        k_minus = {int(state.index[minus_ids[k]]) for k in live}
        loc = float(np.mean([locs[k] for k in live]))
        id_of_plus = {int(state.index[plus_ids[k]]): plus_ids[k] for k in live}
        id_of_minus = {int(state.index[minus_ids[k]]): minus_ids[k] for k in live}
        _, _, records = resolve_collision_cluster(k_plus, k_minus, [(loc, k_plus, k_minus)])
        (_, rp, rm) = records[0]
        when = t0 + subtime
        for idx in rp:
            pid = id_of_plus[idx]
            status[pid] = ANNIHILATED
            state.frozen_x[pid] = loc
            state.tau[pid] = when
        for idx in rm:
            pid = id_of_minus[idx]
            status[pid] = ANNIHILATED
            state.frozen_x[pid] = loc
            state.tau[pid] = when
        state.collisions.append(CollisionRecord(when, loc, rp, rm))
        resolved += 1
    return resolved


def step_system(state: ParticleSystemState, dt: float, rng: np.random.Generator) -> ParticleSystemState:
    """Advance the system by ``dt`` in place and return it.

    Order within a step: every live path moves (annihilated ones included);
    alive particles whose path died become cemetery particles; remaining alive
    pairs that met are annihilated in sub-step time order.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    spec = state.spec
    prev = state.live_x
    live = ~np.isnan(prev)
    n_live = int(live.sum())
    nxt = prev.copy()
    if n_live:
        if spec.is_diffusion:
            gauss = rng.standard_normal(n_live)
            unif = rng.random(n_live)
            nxt[live] = advance(prev[live], state.time, dt, gauss, unif, spec)
        else:
            jumps = jump_increments(rng.poisson(dt, n_live), rng)
            nxt[live] = prev[live] + jumps
    alive = state.status == ALIVE
    died = alive & np.isnan(nxt)
    state.status[died] = CEMETERY
    state.frozen_x[died] = np.nan
    alive &= ~died
    mode = "continuous" if spec.is_diffusion else "jump"
    events = detect_crossings(prev, nxt, state.sign, alive, dt, state.collide_tol, mode)
    resolve_step_collisions(state, events, state.time, dt)
    still = state.status == ALIVE
    state.frozen_x[still] = nxt[still]
    state.live_x = nxt
    state.time += dt
    return state


# --------------------------------------------------------------------------
# measures of a system
# --------------------------------------------------------------------------


def measure_Y(state: ParticleSystemState) -> ParticleMeasure:
    """Signed measure of the alive particles; cemetery particles appear at NaN."""
    keep = state.status != ANNIHILATED
    pos = np.where(state.status[keep] == ALIVE, state.live_x[keep], np.nan)
    ids = np.flatnonzero(keep)
    return ParticleMeasure(pos, state.sign[keep], ids, state.spec.interval)


def measure_Y_frozen(state: ParticleSystemState) -> SignedAtomMeasure:
    """Signed measure from the stopped paths; annihilated pairs cancel."""
    here = ~np.isnan(state.frozen_x)
    atoms = np.column_stack([state.frozen_x[here], state.sign[here].astype(float)])
    return canonicalize(atoms, float(np.sum(~here)), state.spec.interval)


def measure_Z(state: ParticleSystemState) -> SignedAtomMeasure:
    """Unsigned measure of every particle's unstopped path."""
    here = ~np.isnan(state.live_x)
    atoms = np.column_stack([state.live_x[here], np.ones(int(here.sum()))])
    return canonicalize(atoms, float(np.sum(~here)), state.spec.interval)


# --------------------------------------------------------------------------
# invariant checks
# --------------------------------------------------------------------------


def domination_holds(y: SignedAtomMeasure, z: SignedAtomMeasure) -> bool:
    """Whether ``|y| <= z`` atom by atom."""
    if len(y) == 0:
        return True
    k = np.searchsorted(z.positions, y.positions)
    k = np.minimum(k, len(z) - 1) if len(z) else k
    if len(z) == 0:
        return False
    matched = z.positions[k] == y.positions
    return bool(np.all(matched) and np.all(np.abs(y.weights) <= z.weights[k]))


def z_total(state: ParticleSystemState) -> int:
    z = measure_Z(state)
    return int(round(z.weights.sum() + z.cemetery_mass))


# --------------------------------------------------------------------------
# trajectory logs
# --------------------------------------------------------------------------


def trajectory_rows(state: ParticleSystemState) -> list[tuple]:
    """``(time, particle_id, sign, status, live_x, frozen_x)`` for every particle."""
    names = [STATUS_NAMES[int(k)] for k in state.status]
    return list(
        zip(
            [state.time] * state.n,
            range(state.n),
            state.sign.tolist(),
            names,
            state.live_x.tolist(),
            state.frozen_x.tolist(),
        )
    )
