import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from zerocross.dynamics import ProcessSpec, apply_kappa_shift
from zerocross.fokker_planck import (
    FDSolverConfig,
    StabilityError,
    crossing_series,
    density_on_grid,
    discrete_delta,
    initial_grid,
    mass_balance,
    solve_every_step,
    solve_forward,
    stable_dt,
)
from zerocross.scenario import load_scenario


def test_config_validation():
    for kw in ({"points": 2}, {"x_min": 1.0}, {"dt": 0.0}, {"theta": 1.5}, {"advection": "weno"}):
        args = {"x_min": 0.0, "x_max": 1.0, "points": 11, "dt": 0.1, **kw}
        with pytest.raises(ValueError):
            FDSolverConfig(**args)
    cfg = FDSolverConfig(0.0, 1.0, 11, 0.1)
    assert cfg.dx == pytest.approx(0.1) and cfg.x[-1] == pytest.approx(1.0)


def test_discrete_delta_places_mass():
    cfg = FDSolverConfig(-1.0, 1.0, 21, 0.01)
    g = discrete_delta(cfg, [(0.0, 2.0), (0.52, -1.0)])
    assert g.values[10] == pytest.approx(20.0)
    assert g.values[15] == pytest.approx(-10.0)
    with pytest.raises(ValueError):
        discrete_delta(cfg, [(1.0, 1.0)])


def test_density_on_grid_preserves_interior_mass():
    cfg = FDSolverConfig(-2.0, 2.0, 81, 0.01)
    g = density_on_grid(cfg, [-1.0, 0.0, 1.0], [1.0, -2.0])
    assert g.values.sum() * cfg.dx == pytest.approx(-1.0, abs=1e-12)


def test_heat_kernel():
    cfg = FDSolverConfig(-8.0, 8.0, 2001, 1e-4)
    u0 = discrete_delta(cfg, [(0.0, 1.0)])
    u1 = solve_forward(ProcessSpec(), u0, 1.0, cfg)[-1]
    l1 = np.sum(np.abs(u1.values - stats.norm.pdf(cfg.x))) * cfg.dx
    assert l1 <= 0.02


def test_killing_decays_mass():
    cfg = FDSolverConfig(-10.0, 10.0, 801, 1e-3)
    u0 = discrete_delta(cfg, [(0.0, 1.0)])
    series = solve_forward(ProcessSpec(gamma="-1"), u0, 1.0, cfg, [0.5])
    for g in series:
        assert g.integral() == pytest.approx(math.exp(-g.time), rel=0.01)


def test_kappa_shift_is_undone_on_output():
    cfg = FDSolverConfig(-10.0, 10.0, 401, 1e-3)
    u0 = discrete_delta(cfg, [(-1.0, 1.0), (1.0, -0.5)])
    plain = ProcessSpec(beta="-x", gamma="1")
    shifted = apply_kappa_shift(plain, -2.0, 1.0)
    a = solve_forward(plain, u0, 1.0, cfg)[-1]
    b = solve_forward(shifted, u0, 1.0, cfg)[-1]
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12, atol=1e-14)


@settings(max_examples=20)
@given(st.floats(0.2, 2.0), st.floats(-1.0, 1.0), st.floats(-2.0, 0.0))
def test_positive_data_stays_positive(a, b, g):
    cfg = FDSolverConfig(-6.0, 6.0, 241, 2e-3, theta=1.0, advection="upwind")
    spec = ProcessSpec(alpha=a, beta=b, gamma=g)
    u0 = density_on_grid(cfg, [-1.0, 1.0], [1.0])
    for snap in solve_forward(spec, u0, 0.5, cfg, [0.1, 0.25]):
        assert np.all(snap.values >= -1e-14)


@pytest.mark.parametrize("theta, advection", [(0.5, "central"), (1.0, "upwind"), (0.0, "central")])
def test_mass_balance(theta, advection):
    cfg = FDSolverConfig(-4.0, 4.0, 161, 1e-3, theta=theta, advection=advection)
    spec = ProcessSpec(alpha="1 + 0.5 * sin(x)^2", beta="-0.5 * x", gamma="-0.25 * (1 + tanh(x))")
    u0 = density_on_grid(cfg, [-2.0, 0.0, 2.0], [1.0, -0.5])
    series = solve_every_step(spec, u0, 0.2, cfg)
    assert np.max(np.abs(mass_balance(series, spec, cfg))) <= 1e-8


def test_zero_data_stays_zero():
    cfg = FDSolverConfig(-4.0, 4.0, 81, 1e-2)
    series = solve_every_step(ProcessSpec(gamma="-1"), cfg.empty(), 0.1, cfg)
    assert all(np.all(g.values == 0) for g in series)
    np.testing.assert_array_equal(mass_balance(series, ProcessSpec(gamma="-1"), cfg), 0.0)


def _monotone_to_zero(cross):
    assert cross[0] == 2 and cross[-1] == 0
    assert all(b <= a for a, b in zip(cross, cross[1:]))


def test_sine_interval_crossings_fall():
    # sin(3 pi x) is an eigenmode; only rounding puts mass in the first mode, so the drop comes late
    sc = load_scenario("sine_interval")
    times = list(sc.t_grid) + [0.5, 1.0, 1.5, 2.0, 3.0]
    series = solve_forward(sc.process, initial_grid(sc.initial, sc.pde), 3.0, sc.pde, times)
    _monotone_to_zero(crossing_series(series))


def test_perturbed_third_mode_crossings_fall():
    cfg = FDSolverConfig(0.0, 1.0, 401, 1e-4)
    edges = np.linspace(0.0, 1.0, 1001)
    mids = 0.5 * (edges[1:] + edges[:-1])
    values = np.sin(3 * np.pi * mids) + 0.01 * np.sin(np.pi * mids)
    series = solve_forward(ProcessSpec(lower=0.0, upper=1.0), density_on_grid(cfg, edges, values), 0.5, cfg, [0.05, 0.1, 0.2, 0.3])
    cross = crossing_series(series)
    _monotone_to_zero(cross)
    assert cross.index(0) <= 4


def test_one_signed_series():
    cfg = FDSolverConfig(-4.0, 4.0, 161, 1e-3)
    series = solve_forward(ProcessSpec(), density_on_grid(cfg, [-1.0, 1.0], [1.0]), 0.5, cfg, [0.1])
    assert crossing_series(series) == [0, 0, 0]
    assert crossing_series([cfg.empty()]) == [-1]


def test_explicit_stability_warning_and_error():
    cfg = FDSolverConfig(-1.0, 1.0, 41, 0.01, theta=0.0)
    spec = ProcessSpec()
    assert stable_dt(spec, cfg) == pytest.approx(cfg.dx**2)
    u0 = discrete_delta(cfg, [(0.0, 1.0)])
    with pytest.warns(RuntimeWarning, match="unstable"):
        solve_forward(spec, u0, 0.01, cfg)
    strict = FDSolverConfig(-1.0, 1.0, 41, 0.01, theta=0.0, enforce_stability=True)
    with pytest.raises(StabilityError):
        solve_forward(spec, u0, 0.01, strict)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        solve_forward(spec, u0, 0.01, FDSolverConfig(-1.0, 1.0, 41, 0.01))


def test_initial_data_must_match_grid():
    cfg = FDSolverConfig(-1.0, 1.0, 41, 0.01)
    other = FDSolverConfig(-1.0, 1.0, 21, 0.01)
    with pytest.raises(ValueError):
        solve_forward(ProcessSpec(), discrete_delta(other, [(0.0, 1.0)]), 0.1, cfg)
