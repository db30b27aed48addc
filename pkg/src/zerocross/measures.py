"""Finite signed measures on an interval and their zero-crossing counts.

Atomic signed measures are stored in canonical form (sorted, merged, no
zero weights).  The number of zero-crossings of a measure is the length of
its longest sign-alternating chain of atoms minus one, with the zero measure
assigned ``-1``.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SignSeq = tuple[int, ...]

INF = math.inf


class EnumerationLimitError(OverflowError):
    """Raised when brute-force enumeration would exceed its size budget."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _check_interval(interval: tuple[float, float]) -> tuple[float, float]:
    lo, hi = float(interval[0]), float(interval[1])
    if math.isnan(lo) or math.isnan(hi) or not lo < hi:
        raise ValueError(f"invalid interval {interval!r}")
    return lo, hi


@dataclass(frozen=True)
class SignedAtomMeasure:
    """Weighted atoms on an open interval plus mass sitting at the cemetery.

    Build instances through :func:`canonicalize`; the constructor trusts its
    arguments.
    """

    positions: np.ndarray
    weights: np.ndarray
    cemetery_mass: float = 0.0
    interval: tuple[float, float] = (-INF, INF)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.positions.tolist(), self.weights.tolist()))

    @property
    def total_variation(self) -> float:
        return float(np.abs(self.weights).sum())

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def positive_part(self) -> SignedAtomMeasure:
        keep = self.weights > 0
        return SignedAtomMeasure(
            _frozen(self.positions[keep]), _frozen(self.weights[keep]), 0.0, self.interval
        )

    def negative_part(self) -> SignedAtomMeasure:
        keep = self.weights < 0
        return SignedAtomMeasure(
            _frozen(self.positions[keep]), _frozen(-self.weights[keep]), 0.0, self.interval
        )

    def integrate(self, values: np.ndarray | float) -> float:
        """Return ``sum(w_i * values_i)`` for values already evaluated at the atoms."""
        return float(np.dot(self.weights, np.broadcast_to(values, self.weights.shape)))

    def __neg__(self) -> SignedAtomMeasure:
        return SignedAtomMeasure(self.positions, _frozen(-self.weights), self.cemetery_mass, self.interval)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SignedAtomMeasure):
            return NotImplemented
        return (
            np.array_equal(self.positions, other.positions)
            and np.array_equal(self.weights, other.weights)
            and self.cemetery_mass == other.cemetery_mass
            and self.interval == other.interval
        )

    __hash__ = None  # type: ignore[assignment]


def canonicalize(
    atoms: Iterable[tuple[float, float]] | np.ndarray,
    cemetery_mass: float = 0.0,
    interval: tuple[float, float] = (-INF, INF),
) -> SignedAtomMeasure:
    """Sort atoms, merge coincident ones and drop those with zero net weight.

    Raises
    ------
    ValueError
        On a non-finite position or weight, a position outside the open
        interval, or a negative or non-finite cemetery mass.
    """
    lo, hi = _check_interval(interval)
    arr = np.asarray(list(atoms) if not isinstance(atoms, np.ndarray) else atoms, dtype=float)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("atoms must be (position, weight) pairs")
    if not np.all(np.isfinite(arr)):
        raise ValueError("atom positions and weights must be finite")
    pos, w = arr[:, 0], arr[:, 1]
    if np.any(pos <= lo) or np.any(pos >= hi):
        raise ValueError(f"atom outside the open interval ({lo}, {hi})")
    cemetery_mass = float(cemetery_mass)
    if not (math.isfinite(cemetery_mass) and cemetery_mass >= 0):
        raise ValueError("cemetery_mass must be finite and non-negative")
    uniq, inverse = np.unique(pos, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inverse, w)
    keep = merged != 0
    return SignedAtomMeasure(_frozen(uniq[keep]), _frozen(merged[keep]), cemetery_mass, (lo, hi))


def scale(mu: SignedAtomMeasure, c: float) -> SignedAtomMeasure:
    """Multiply every weight (and the cemetery mass) by ``c > 0``."""
    if not c > 0 or not math.isfinite(c):
        raise ValueError("scale factor must be a positive finite number")
    return SignedAtomMeasure(mu.positions, _frozen(mu.weights * c), mu.cemetery_mass * c, mu.interval)


@dataclass(frozen=True)
class ParticleMeasure:
    """Unit-weight signed particles; a NaN position marks the cemetery."""

    positions: np.ndarray
    signs: np.ndarray
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]
    interval: tuple[float, float] = (-INF, INF)

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=float)
        sg = np.asarray(self.signs, dtype=np.int8)
        ids = np.arange(len(pos)) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if not (pos.shape == sg.shape == ids.shape) or pos.ndim != 1:
            raise ValueError("positions, signs and ids must be aligned 1-d arrays")
        if not np.all((sg == 1) | (sg == -1)):
            raise ValueError("particle signs must be +1 or -1")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "signs", _frozen(sg))
        object.__setattr__(self, "ids", _frozen(ids))
        object.__setattr__(self, "interval", _check_interval(self.interval))

    @classmethod
    def from_entries(
        cls, entries: Sequence[tuple[float, int]], interval: tuple[float, float] = (-INF, INF)
    ) -> ParticleMeasure:
        pos = [float(p) for p, _ in entries]
        sg = [int(s) for _, s in entries]
        return cls(np.array(pos, dtype=float), np.array(sg, dtype=np.int8), None, interval)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def in_interval(self) -> np.ndarray:
        return ~np.isnan(self.positions)

    @property
    def cemetery_count(self) -> int:
        return int(np.isnan(self.positions).sum())

    def is_canonical(self) -> bool:
        live = self.in_interval
        pos, sg = self.positions[live], self.signs[live]
        uniq, inverse = np.unique(pos, return_inverse=True)
        lo = np.full(len(uniq), 2, dtype=np.int8)
        hi = np.full(len(uniq), -2, dtype=np.int8)
        np.minimum.at(lo, inverse, sg)
        np.maximum.at(hi, inverse, sg)
        return bool(np.all(lo == hi))

    def to_atom_measure(self) -> SignedAtomMeasure:
        live = self.in_interval
        atoms = np.column_stack([self.positions[live], self.signs[live].astype(float)])
        return canonicalize(atoms, float(self.cemetery_count), self.interval)

    def counts(self) -> tuple[int, int]:
        """Return the numbers of (+, -) particles inside the interval."""
        live = self.in_interval
        return int(np.sum(self.signs[live] > 0)), int(np.sum(self.signs[live] < 0))


@dataclass(frozen=True)
class GridFunction:
    """Values of a function on the uniform grid ``x0 + k * dx`` at a given time."""

    x0: float
    dx: float
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid values must be finite")
        if self.time < 0:
            raise ValueError("time must be non-negative")
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(len(self.values))

    def integral(self) -> float:
        """Rectangle-rule integral, exact for the point-mass reading of the grid."""
        return float(self.values.sum() * self.dx)

    def with_values(self, values: np.ndarray, time: float | None = None) -> GridFunction:
        return GridFunction(self.x0, self.dx, values, self.time if time is None else time)


# --------------------------------------------------------------------------
# sign sequences
# --------------------------------------------------------------------------


def sign_sequence(nu: ParticleMeasure) -> SignSeq:
    """Signs of the particles in ``nu`` ordered by position; cemetery excluded.

    Coincident same-signed particles are ordered by particle id.
    """
    if not nu.is_canonical():
        raise ValueError("coincident particles of opposite sign: measure is not canonical")
    live = nu.in_interval
    pos, sg, ids = nu.positions[live], nu.signs[live], nu.ids[live]
    order = np.lexsort((ids, pos))
    return tuple(int(s) for s in sg[order])


def sigma(a: Sequence[int]) -> int:
    """Number of sign alternations in ``a``; ``-1`` for the empty sequence."""
    if len(a) == 0:
        return -1
    arr = np.asarray(a)
    if not np.all((arr == 1) | (arr == -1)):
        raise ValueError("sign sequence entries must be +1 or -1")
    return int(np.count_nonzero(arr[1:] != arr[:-1]))


def is_subsequence(a: Sequence[int], b: Sequence[int]) -> bool:
    """Whether ``a`` can be obtained from ``b`` by deleting entries."""
    it = iter(b)
    return all(any(x == y for y in it) for x in a)


def block_signs(weights: np.ndarray) -> SignSeq:
    """Collapse a weight vector to the signs of its maximal same-sign runs."""
    s = np.sign(weights[weights != 0]).astype(int)
    if len(s) == 0:
        return ()
    keep = np.ones(len(s), dtype=bool)
    keep[1:] = s[1:] != s[:-1]
    return tuple(s[keep].tolist())


# --------------------------------------------------------------------------
# crossing counters
# --------------------------------------------------------------------------


def crossings(mu: SignedAtomMeasure | ParticleMeasure) -> int:
    """Number of zero-crossings of a measure, ``-1`` for the zero measure.

    The cemetery mass never contributes.
    """
    if isinstance(mu, ParticleMeasure):
        mu = mu.to_atom_measure()
    return sigma(block_signs(mu.weights))


def crossings_bruteforce(mu: SignedAtomMeasure, n_max: int = 12, mode: str = "enumerate") -> int:
    """Reference crossing count taken straight from the product-measure definition.

    ``mode="enumerate"`` walks every increasing tuple of atoms and asks whether
    the alternating product measure charges it; it refuses measures with more
    than ``n_max`` atoms.  ``mode="dp"`` computes the longest alternating chain
    of atoms by dynamic programming and has no size limit.
    """
    pos = np.asarray(mu.positions)
    signs = [1 if w > 0 else -1 for w in np.asarray(mu.weights) if w != 0]
    if len(set(pos.tolist())) != len(pos):
        raise ValueError("measure is not canonical")
    n = len(signs)
    if mode == "dp":
        best = {1: 0, -1: 0}
        for s in signs:
            best[s] = max(best[s], best[-s] + 1)
        return max(best.values()) - 1
    if mode != "enumerate":
        raise ValueError(f"unknown mode {mode!r}")
    if n > n_max:
        raise EnumerationLimitError(f"{n} atoms exceed enumeration limit n_max={n_max}")
    for k in range(n, 0, -1):
        for combo in itertools.combinations(range(n), k):
            # positions are strictly increasing along combo (atoms sorted)
            first = signs[combo[0]]
            if all(signs[c] == (first if j % 2 == 0 else -first) for j, c in enumerate(combo)):
                return k - 1
    return -1


def _tent_integrals(mu: SignedAtomMeasure, intervals: Sequence[tuple[float, float]]) -> np.ndarray:
    out = np.empty(len(intervals))
    for k, (a, b) in enumerate(intervals):
        c, h = 0.5 * (a + b), 0.5 * (b - a)
        g = np.clip(1.0 - np.abs(mu.positions - c) / h, 0.0, None)
        out[k] = float(np.dot(mu.weights, g))
    return out


def bump_alternation(mu: SignedAtomMeasure, intervals: Sequence[tuple[float, float]]) -> int:
    """Strict sign alternations of ``mu(g_k)`` over tent bumps on ordered intervals.

    Zero integrals are skipped.  The result never exceeds ``crossings(mu)``.
    """
    ivs = [(float(a), float(b)) for a, b in intervals]
    for a, b in ivs:
        if not a < b:
            raise ValueError(f"degenerate or reversed interval ({a}, {b})")
    for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
        if not b0 < a1:
            raise ValueError("intervals must be pairwise disjoint and strictly ordered")
    vals = _tent_integrals(mu, ivs)
    return max(sigma(block_signs(vals)), 0)


def grid_crossings(u: GridFunction | np.ndarray, zero_tol: float = 0.0) -> int:
    """Sign alternations of grid values after zeroing entries with ``|v| <= zero_tol``."""
    if zero_tol < 0:
        raise ValueError("zero_tol must be non-negative")
    vals = np.asarray(u.values if isinstance(u, GridFunction) else u, dtype=float)
    vals = np.where(np.abs(vals) <= zero_tol, 0.0, vals)
    return sigma(block_signs(vals))


# --------------------------------------------------------------------------
# CSV snapshots
# --------------------------------------------------------------------------


def write_measure_csv(mu: SignedAtomMeasure, path: str | Path) -> None:
    lines = ["position,weight"]
    lines += [f"{p:.17g},{w:.17g}" for p, w in zip(mu.positions.tolist(), mu.weights.tolist())]
    lines.append(f"# cemetery_mass={mu.cemetery_mass:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_measure_csv(path: str | Path, interval: tuple[float, float] = (-INF, INF)) -> SignedAtomMeasure:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "position,weight":
        raise ValueError(f"{path}: expected header 'position,weight'")
    atoms = []
    cemetery = 0.0
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key.strip() == "cemetery_mass":
                cemetery = float(value)
            continue
        try:
            p, w = line.split(",")
            atoms.append((float(p), float(w)))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed row {line!r}") from exc
    return canonicalize(atoms, cemetery, interval)
