import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from zerocross.measures import (
    EnumerationLimitError,
    GridFunction,
    ParticleMeasure,
    SignedAtomMeasure,
    block_signs,
    bump_alternation,
    canonicalize,
    crossings,
    crossings_bruteforce,
    grid_crossings,
    is_subsequence,
    read_measure_csv,
    scale,
    sigma,
    sign_sequence,
    write_measure_csv,
)

# ---------------------------------------------------------------- strategies

positions = st.one_of(
    st.integers(-5, 5).map(float),
    st.floats(-10, 10, allow_nan=False, allow_infinity=False),
)
weights = st.one_of(
    st.integers(-3, 3).map(float),
    st.floats(-5, 5, allow_nan=False, allow_infinity=False),
)
raw_atoms = st.lists(st.tuples(positions, weights), max_size=10)
measures = raw_atoms.map(canonicalize)
signs = st.sampled_from([-1, 1])
sign_seqs = st.lists(signs, max_size=15).map(tuple)


@st.composite
def particle_measures(draw):
    sites = draw(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=6, unique=True))
    site_sign = [draw(signs) for _ in sites]
    picks = draw(st.lists(st.integers(0, len(sites) - 1), max_size=20))
    dead = draw(st.lists(signs, max_size=4))
    pos = [sites[k] for k in picks] + [math.nan] * len(dead)
    sg = [site_sign[k] for k in picks] + dead
    return ParticleMeasure(np.array(pos, dtype=float), np.array(sg))


# ---------------------------------------------------------------- canonicalize


def test_canonicalize_cancels_exactly():
    mu = canonicalize([(0, 1), (0, -1)])
    assert len(mu) == 0
    assert mu.total_variation == 0


def test_canonicalize_merges_same_sign():
    assert canonicalize([(1, 1), (1, 2)]).atoms == [(1.0, 3.0)]


def test_canonicalize_sorts():
    assert canonicalize([(2, -1), (1, 0.5)]).atoms == [(1.0, 0.5), (2.0, -1.0)]


@pytest.mark.parametrize(
    "atoms, kwargs",
    [
        ([(math.nan, 1)], {}),
        ([(0, math.inf)], {}),
        ([(1.0, 1)], {"interval": (0.0, 1.0)}),
        ([(0.5, 1)], {"cemetery_mass": -1.0}),
    ],
)
def test_canonicalize_rejects(atoms, kwargs):
    with pytest.raises(ValueError):
        canonicalize(atoms, **kwargs)


def test_measure_arrays_are_read_only():
    mu = canonicalize([(0, 1)])
    with pytest.raises(ValueError):
        mu.weights[0] = 3.0


@given(raw_atoms)
def test_canonical_form_is_idempotent_and_sorted(atoms):
    mu = canonicalize(atoms)
    assert np.all(np.diff(mu.positions) > 0)
    assert np.all(mu.weights != 0)
    assert canonicalize(mu.atoms) == mu


def test_hahn_jordan_parts():
    mu = canonicalize([(0, 2), (1, -3), (2, 1)])
    assert mu.positive_part().atoms == [(0.0, 2.0), (2.0, 1.0)]
    assert mu.negative_part().atoms == [(1.0, 3.0)]
    assert mu.total_variation == 6.0
    assert mu.total_mass == 0.0


# ---------------------------------------------------------------- sign sequences


def test_sign_sequence_orders_by_position():
    nu = ParticleMeasure.from_entries([(4, 1), (2, -1), (1, 1), (3, -1)])
    assert sign_sequence(nu) == (1, -1, -1, 1)


def test_sign_sequence_of_empty_measure():
    assert sign_sequence(ParticleMeasure.from_entries([])) == ()


def test_sign_sequence_ignores_cemetery():
    nu = ParticleMeasure.from_entries([(1, 1), (math.nan, -1)])
    assert sign_sequence(nu) == (1,)


def test_sign_sequence_tie_break_by_id():
    nu = ParticleMeasure(np.array([0.0, 0.0, -1.0]), np.array([1, 1, -1]), np.array([7, 3, 5]))
    assert sign_sequence(nu) == (-1, 1, 1)


def test_sign_sequence_rejects_opposite_coincidence():
    nu = ParticleMeasure.from_entries([(0, 1), (0, -1)])
    assert not nu.is_canonical()
    with pytest.raises(ValueError):
        sign_sequence(nu)


@pytest.mark.parametrize("seq, expected", [((), -1), ((1,), 0), ((1, -1, 1), 2), ((1, 1, -1, -1), 1)])
def test_sigma(seq, expected):
    assert sigma(seq) == expected


@pytest.mark.parametrize(
    "a, b, expected",
    [((), (1, -1), True), ((1, -1), (1, 1, -1), True), ((-1, 1), (1, -1), False), ((1,), (), False)],
)
def test_is_subsequence(a, b, expected):
    assert is_subsequence(a, b) is expected


@given(sign_seqs, st.data())
def test_sigma_is_monotone_in_subsequence_order(b, data):
    mask = data.draw(st.lists(st.booleans(), min_size=len(b), max_size=len(b)))
    a = tuple(x for x, keep in zip(b, mask) if keep)
    assert is_subsequence(a, b)
    assert sigma(a) <= sigma(b)


@given(particle_measures())
def test_crossings_equals_sigma_of_sign_sequence(nu):
    assert crossings(nu) == sigma(sign_sequence(nu))
    assert crossings(nu.to_atom_measure()) == sigma(sign_sequence(nu))


def test_block_signs_collapse_real_weights():
    assert block_signs(np.array([0.5, 2.0, 0.0, -1e-3, 3.0])) == (1, -1, 1)
    assert block_signs(np.zeros(3)) == ()


# ---------------------------------------------------------------- crossings


def test_counterexample_measure_has_one_crossing():
    assert crossings(canonicalize([(0, 1), (0.5, -1)])) == 1


def test_zero_measure_has_minus_one():
    empty = canonicalize([])
    assert crossings(empty) == -1
    assert crossings_bruteforce(empty) == -1


def test_two_crossings_example():
    mu = canonicalize([(1, 1), (2, -2), (3, 1)])
    assert crossings(mu) == 2
    assert crossings_bruteforce(mu) == 2


def test_one_signed_measure_has_zero():
    mu = canonicalize([(0, 1), (1, 0.3), (5, 2)])
    assert crossings(mu) == crossings_bruteforce(mu) == 0


def test_cemetery_mass_does_not_count():
    mu = canonicalize([(0, 1)], cemetery_mass=4.0)
    assert crossings(mu) == 0


def test_bruteforce_refuses_large_input():
    mu = canonicalize([(k, (-1) ** k) for k in range(13)])
    with pytest.raises(EnumerationLimitError):
        crossings_bruteforce(mu, n_max=12)
    assert crossings_bruteforce(mu, mode="dp") == 12


@given(measures)
def test_crossings_match_bruteforce(mu):
    assert crossings(mu) == crossings_bruteforce(mu, n_max=12)
    assert crossings(mu) == crossings_bruteforce(mu, mode="dp")


@given(measures, st.floats(1e-6, 1e6))
def test_scale_invariance(mu, c):
    assert crossings(scale(mu, c)) == crossings(mu)


@given(measures)
def test_negation_symmetry(mu):
    assert crossings(-mu) == crossings(mu)


def test_scale_examples():
    mu = canonicalize([(0, 1), (1, -1)])
    doubled = scale(mu, 2)
    assert doubled.atoms == [(0.0, 2.0), (1.0, -2.0)]
    assert crossings(doubled) == 1
    assert len(scale(canonicalize([]), 5)) == 0
    half = scale(canonicalize([(1, 1), (2, -2), (3, 1)]), 0.5)
    assert crossings_bruteforce(half) == 2
    with pytest.raises(ValueError):
        scale(mu, 0.0)


# ---------------------------------------------------------------- bumps


def test_bump_alternation_examples():
    mu = canonicalize([(0, 1), (1, -1)])
    assert bump_alternation(mu, [(-0.2, 0.2), (0.8, 1.2)]) == 1
    assert bump_alternation(mu, [(2, 3), (4, 5)]) == 0
    assert bump_alternation(canonicalize([(0, 1), (1, 2)]), [(-1, 0.5), (0.6, 2)]) == 0


def test_bump_alternation_rejects_bad_intervals():
    mu = canonicalize([(0, 1)])
    with pytest.raises(ValueError):
        bump_alternation(mu, [(0, 0)])
    with pytest.raises(ValueError):
        bump_alternation(mu, [(0, 2), (1, 3)])


@given(measures, st.lists(st.floats(-12, 12, allow_nan=False), min_size=2, max_size=12, unique=True))
def test_bumps_never_exceed_crossings(mu, cuts):
    cuts = sorted(cuts)
    intervals = [(a, b) for a, b in zip(cuts[0::2], cuts[1::2]) if b - a > 1e-9]
    intervals = [iv for k, iv in enumerate(intervals) if k == 0 or iv[0] > intervals[k - 1][1]]
    assume(intervals)
    assert bump_alternation(mu, intervals) <= max(crossings(mu), 0)


# ---------------------------------------------------------------- grids


def test_grid_crossings_examples():
    x = np.linspace(0, 1, 1001)
    assert grid_crossings(GridFunction(0.0, 0.001, np.sin(3 * np.pi * x)), 1e-12) == 2
    assert grid_crossings(np.ones(10)) == 0
    assert grid_crossings(np.zeros(10)) == -1
    assert grid_crossings(np.array([1.0, 1e-15, -1e-15, 1.0]), zero_tol=1e-12) == 0


def test_grid_integral():
    g = GridFunction(0.0, 0.5, np.array([0.0, 2.0, 2.0, 0.0]))
    assert g.integral() == pytest.approx(2.0)
    assert np.allclose(g.x, [0, 0.5, 1.0, 1.5])


# ---------------------------------------------------------------- CSV


@given(measures, st.floats(0, 10, allow_nan=False))
def test_csv_round_trip_is_bit_exact(tmp_path_factory, mu, cem):
    mu = canonicalize(mu.atoms, cem)
    path = tmp_path_factory.mktemp("csv") / "mu.csv"
    write_measure_csv(mu, path)
    back = read_measure_csv(path)
    assert back == mu
    assert back.positions.tobytes() == mu.positions.tobytes()
    assert back.cemetery_mass == mu.cemetery_mass


def test_csv_format(tmp_path):
    path = tmp_path / "m.csv"
    write_measure_csv(canonicalize([(0.1, -2)], cemetery_mass=0.5), path)
    lines = path.read_text().splitlines()
    assert lines == ["position,weight", "0.10000000000000001,-2", "# cemetery_mass=0.5"]


def test_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n1,2\n")
    with pytest.raises(ValueError):
        read_measure_csv(path)


def test_canonicalize_requires_pairs():
    with pytest.raises(ValueError):
        canonicalize(np.zeros((2, 3)))
    assert isinstance(canonicalize(np.zeros((0, 2))), SignedAtomMeasure)
