"""Numbered acceptance checks shared by ``zerocross validate`` and the test suite.

Every check returns :class:`CheckResult` objects instead of asserting, so the
CLI can print a table and the tests can assert on ``passed``.  Sizes default
to the acceptance levels; ``quick=True`` shrinks them for smoke runs only.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dynamics import JumpDistribution, ProcessSpec, exact_jump_distribution
from .expr import parse_expr
from .fokker_planck import FDSolverConfig, crossing_series, initial_grid, solve_forward
from .measures import (
    EnumerationLimitError,
    GridFunction,
    ParticleMeasure,
    canonicalize,
    crossings,
    crossings_bruteforce,
    grid_crossings,
    sigma,
    sign_sequence,
)
from .montecarlo import (
    InitialLaw,
    classify_violations,
    empirical_signed_density,
    estimate_pushforward,
    run_ensemble,
    sample_initial,
)
from .scenario import Scenario, ScenarioError, load_scenario, scenario_from_dict

MASS_THRESHOLD = 1e-12


@dataclass
class CheckResult:
    number: int
    title: str
    passed: bool
    detail: str
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:>2}. {self.title}: {self.detail}"


# --------------------------------------------------------------------------
# 1-3: invariants over random diffusions
# --------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def random_raw_scenario(rng: np.random.Generator, index: int) -> dict:
    """A random diffusion scenario table; may fail the coefficient probe."""
    a0, a1, a2 = rng.uniform(0.2, 1.5), rng.uniform(0.0, 1.0), rng.uniform(0.0, 0.05)
    w = rng.uniform(0.5, 3.0)
    alpha = rng.choice(
        [
            f"{_fmt(a0)} + {_fmt(a1)}*sin({_fmt(w)}*x)^2 + {_fmt(a2)}*x^2",
            f"{_fmt(a0)} + {_fmt(a1)}*cos({_fmt(w)}*x + s)",
            f"{_fmt(a0)}*(1 + {_fmt(a2)}*x^2)",
        ]
    )
    b0, b1, b2 = rng.uniform(-0.5, 0.5), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)
    beta = rng.choice(
        [
            f"{_fmt(b0)} + {_fmt(b1)}*x",
            f"{_fmt(b0)} + {_fmt(b2)}*sin({_fmt(w)}*x)",
            f"{_fmt(b1)}*x - {_fmt(abs(b2))}*x^3/10",
        ]
    )
    g0, g1 = rng.uniform(0.0, 1.0), rng.uniform(0.0, 0.3)
    gamma = rng.choice(
        [
            "0",
            f"-{_fmt(g0)}",
            f"-{_fmt(g0)} - {_fmt(g1)}*x^2",
            f"{_fmt(g1)}*cos({_fmt(w)}*x) - {_fmt(g0)}",
        ]
    )
    process = {"alpha": str(alpha), "beta": str(beta), "gamma": str(gamma)}
    half = 6.0
    if rng.random() < 0.3:
        half = float(rng.uniform(2.0, 5.0))
        process["lower"], process["upper"] = -half, half
    inner = 0.8 * min(half, 4.0)
    if rng.random() < 0.5:
        k = int(rng.integers(2, 7))
        pos = np.sort(rng.uniform(-inner, inner, k))
        w_ = rng.choice([-1.0, 1.0], k) * rng.uniform(0.5, 2.0, k)
        initial = {"atoms": [[float(p), float(q)] for p, q in zip(pos, w_)]}
    else:
        cells = int(rng.integers(2, 9))
        edges = np.linspace(-inner, inner, cells + 1)
        vals = rng.choice([-1.0, 1.0], cells) * rng.uniform(0.2, 2.0, cells)
        initial = {"edges": edges.tolist(), "values": vals.tolist()}
    return {
        "name": f"random_{index:03d}",
        "process": process,
        "initial": initial,
        "run": {
            "n": int(rng.integers(20, 201)),
            "replicas": 5,
            "dt": 0.01,
            "t_grid": [0.25, 0.5, 0.75, 1.0],
            "seed": int(rng.integers(0, 2**31)),
        },
    }


def random_diffusion_scenarios(count: int, seed: int = 2024) -> tuple[list[Scenario], int]:
    """``count`` random scenarios that pass the probe, plus the number rejected."""
    rng = np.random.default_rng(seed)
    out, rejected = [], 0
    while len(out) < count:
        raw = random_raw_scenario(rng, len(out))
        try:
            out.append(scenario_from_dict(raw))
        except ScenarioError:
            rejected += 1
    return out, rejected


def check_random_invariants(
    scenarios: int = 200, replicas: int = 5, seed: int = 2024, map_fn: Callable = map
) -> list[CheckResult]:
    """Criteria 1-3 from one batch of per-step checked runs."""
    suite, rejected = random_diffusion_scenarios(scenarios, seed)
    kinds = {"monotone": [], "subsequence": [], "conservation": []}
    runs = 0
    annihilations = 0
    for sc in suite:
        ens = run_ensemble(sc, reps=replicas, map_fn=map_fn, check_invariants=True, keep_snapshots=False)
        for r in ens.replicas:
            runs += 1
            annihilations += r.n_collisions
            if np.any(np.diff(r.crossings) > 0):
                kinds["monotone"].append(f"{sc.name} seed={sc.seed} rep={r.rep}: {r.crossings.tolist()}")
            for k, v in classify_violations(r.violations).items():
                kinds[k].extend(f"{sc.name} {x}" for x in v)
    base = f"{len(suite)} scenarios x {replicas} replicas ({rejected} rejected by the probe, {annihilations} collisions)"

    def result(number, title, key):
        bad = kinds[key]
        detail = f"{base}, {len(bad)} violations" + (f"; first: {bad[0]}" if bad else "")
        return CheckResult(number, title, not bad, detail, {"violations": len(bad), "runs": runs})

    return [
        result(1, "crossing count non-increasing", "monotone"),
        result(2, "sign sequence subsequence order", "subsequence"),
        result(3, "Z conservation and |Y| <= Z", "conservation"),
    ]


# --------------------------------------------------------------------------
# 4: crossing counter against brute force
# --------------------------------------------------------------------------


def random_atom_measure(rng: np.random.Generator, max_atoms: int = 10):
    k = int(rng.integers(0, max_atoms + 1))
    if rng.random() < 0.5:
        pos = rng.integers(-4, 5, k).astype(float)  # ties merge and may cancel
    else:
        pos = rng.normal(0.0, 2.0, k)
    if rng.random() < 0.5:
        w = rng.integers(-3, 4, k).astype(float)
    else:
        w = rng.normal(0.0, 1.0, k)
    return canonicalize(np.column_stack([pos, w]) if k else np.zeros((0, 2)))


def random_particle_measure(rng: np.random.Generator, max_particles: int = 30) -> ParticleMeasure:
    n = int(rng.integers(0, max_particles + 1))
    sites = rng.normal(0.0, 3.0, int(rng.integers(1, 9)))
    site_sign = rng.choice([-1, 1], len(sites))
    which = rng.integers(0, len(sites), n)
    pos = sites[which]
    sg = site_sign[which]
    dead = rng.random(n) < 0.1
    pos = np.where(dead, np.nan, pos)
    sg = np.where(dead, rng.choice([-1, 1], n), sg)
    return ParticleMeasure(pos, sg)


def check_counter_oracle(cases: int = 1000, seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    mismatch = []
    for _ in range(cases):
        mu = random_atom_measure(rng)
        fast, slow = crossings(mu), crossings_bruteforce(mu, n_max=12)
        if fast != slow:
            mismatch.append(f"{mu.atoms}: {fast} != {slow}")
    identity = []
    for _ in range(cases):
        nu = random_particle_measure(rng)
        via_seq = sigma(sign_sequence(nu))
        atoms = nu.to_atom_measure()
        direct = crossings(atoms)
        try:
            brute = crossings_bruteforce(atoms, n_max=12)
        except EnumerationLimitError:
            brute = direct
        if not via_seq == direct == brute:
            identity.append(f"{via_seq} {direct} {brute}")
    ok = not mismatch and not identity
    detail = f"{cases} measures: {len(mismatch)} mismatches; {cases} particle measures: {len(identity)} identity failures"
    return CheckResult(4, "crossings equal brute force and sigma(S)", ok, detail)


# --------------------------------------------------------------------------
# 5: sampling never adds crossings
# --------------------------------------------------------------------------


def random_density_law(rng: np.random.Generator, max_crossings: int = 6) -> tuple[InitialLaw, int]:
    blocks = int(rng.integers(1, max_crossings + 2))
    first = rng.choice([-1.0, 1.0])
    values = []
    for b in range(blocks):
        sgn = first * (-1) ** b
        for _ in range(int(rng.integers(1, 4))):
            values.append(sgn * rng.uniform(0.1, 3.0))
        if b < blocks - 1 and rng.random() < 0.3:
            values.append(0.0)  # a gap does not break the alternation
    widths = rng.uniform(0.1, 1.0, len(values))
    edges = np.concatenate([[0.0], np.cumsum(widths)]) - rng.uniform(0, 3)
    return InitialLaw.from_density(edges, values), blocks - 1


def check_sampling_bound(laws: int = 50, samples: int = 10_000, seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0
    bad = []
    for k in range(laws):
        law, known = random_density_law(rng)
        if law.crossings() != known:
            bad.append(f"law {k}: crossings {law.crossings()} != constructed {known}")
            continue
        sizes = rng.integers(1, 41, samples)
        for n in sizes:
            c = crossings(sample_initial(law, int(n), rng))
            if c > known:
                bad.append(f"law {k}: sample with {n} particles has {c} > {known}")
                break
            worst = max(worst, known - c)
    detail = f"{laws} laws x {samples} samples, {len(bad)} violations" + (f"; {bad[0]}" if bad else "")
    return CheckResult(5, "sampled configurations never exceed the crossings of mu", not bad, detail)


# --------------------------------------------------------------------------
# 6: Brownian motion from a point mass
# --------------------------------------------------------------------------


def check_brownian_convergence(n: int = 100_000, dt: float = 1e-3, seed: int = 7, map_fn: Callable = map) -> CheckResult:
    sc = load_scenario("brownian_point").with_overrides(n=n, dt=dt, seed=seed, replicas=1, t_grid=(1.0,), functions=())
    ens = run_ensemble(sc, map_fn=map_fn)
    pos, _ = ens.replicas[0].snapshots[-1]
    ks = stats.kstest(pos, "norm").statistic
    exact = {"x": 0.0, "x^2": 1.0, "cos(x)": math.exp(-0.5)}
    parts = [f"KS={ks:.4f} (<= 0.01)"]
    ok = ks <= 0.01 and len(pos) == n
    zs = {}
    for label, value in exact.items():
        mean, se = estimate_pushforward(ens, 1.0, parse_expr(label))
        z = (mean - value) / se
        zs[label] = z
        ok &= abs(z) <= 3.0
        parts.append(f"{label}: {mean:.5f} vs {value:.5f} ({z:+.2f} SE)")
    return CheckResult(6, "Brownian law and pushforward estimates", bool(ok), "; ".join(parts), {"ks": ks, "z": zs})


# --------------------------------------------------------------------------
# 7: three bumps under Brownian motion
# --------------------------------------------------------------------------


def three_bump_density(t: float, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return stats.norm.pdf(x, -2.0, math.sqrt(t)) - stats.norm.pdf(x, 0.0, math.sqrt(t)) + stats.norm.pdf(x, 2.0, math.sqrt(t))


def check_three_bump(map_fn: Callable = map, reps: int | None = None) -> CheckResult:
    sc = load_scenario("brownian_three_bump")
    xs = np.linspace(-12.0, 12.0, 100_000)
    analytic = {t: grid_crossings(three_bump_density(t, xs)) for t in (0.1, 10.0)}
    ok = analytic[0.1] == 2 and analytic[10.0] == 0
    series = solve_forward(sc.process, initial_grid(sc.initial, sc.pde), sc.t_end, sc.pde, sc.t_grid)
    pde = crossing_series(series, zero_tol=MASS_THRESHOLD)
    pde_ok = pde[1] == 2 and pde[-1] == 0 and all(b <= a for a, b in zip(pde, pde[1:]))
    ens = run_ensemble(sc, reps=reps, map_fn=map_fn, keep_snapshots=False)
    cr = ens.crossings()
    mc_ok = bool(np.all(np.diff(cr, axis=1) <= 0) and np.all(cr[:, 0] <= 2))
    detail = (
        f"analytic t=0.1: {analytic[0.1]}, t=10: {analytic[10.0]}; PDE series {pde}; "
        f"{ens.reps} particle replicas non-increasing and start <= 2: {mc_ok}"
    )
    return CheckResult(7, "three-bump crossings smooth out", bool(ok and pde_ok and mc_ok), detail)


# --------------------------------------------------------------------------
# 8: particles against the forward equation
# --------------------------------------------------------------------------


def density_l1(ens, series: list[GridFunction], t: float, bin_width: float = 0.1) -> float:
    """L1 distance between the binned particle density and the PDE bin averages."""
    snap = next(g for g in series if abs(g.time - t) < 1e-9)
    lo, hi = snap.x0, snap.x0 + snap.dx * (len(snap.values) - 1)
    emp = empirical_signed_density(ens, t, bin_width, lo, hi)
    edges = lo + bin_width * np.arange(len(emp.values) + 1)
    x = snap.x
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (snap.values[1:] + snap.values[:-1]) * snap.dx)])
    mass = np.diff(np.interp(edges, x, cum))
    return float(np.sum(np.abs(emp.values * bin_width - mass)))


def check_pde_mc(
    names: tuple[str, ...] = ("repulsive_killed", "ou_backward_shifted"),
    n: int = 100_000,
    reps: int = 20,
    times: tuple[float, ...] = (0.25, 1.0),
    map_fn: Callable = map,
) -> CheckResult:
    ok = True
    parts = []
    metrics = {}
    for name in names:
        sc = load_scenario(name)
        series = solve_forward(sc.process, initial_grid(sc.initial, sc.pde), max(times), sc.pde, times)
        ens = run_ensemble(sc, n=n, reps=reps, t_grid=times, map_fn=map_fn)
        tv = sc.initial.total_variation
        for t in times:
            d = density_l1(ens, series, t)
            metrics[(name, t)] = d
            ok &= d <= 0.05 * tv
            parts.append(f"{name} t={t:g}: L1={d:.4f} (<= {0.05 * tv:.3f})")
    return CheckResult(8, "particle density matches the forward equation", bool(ok), "; ".join(parts), metrics)


# --------------------------------------------------------------------------
# 9: the jump-walk counterexample
# --------------------------------------------------------------------------


@dataclass
class CounterexampleReport:
    t: float
    truncate: float
    sites: np.ndarray
    weights: np.ndarray
    mu_crossings: int
    truncated_crossings: int
    positive_sites: int
    negative_sites: int
    interleaved: bool
    certified_bound: int
    leak: float


def counterexample_report(
    t: float = 1.0, truncate: float = 3.5, K: int = 40, threshold: float = MASS_THRESHOLD
) -> CounterexampleReport:
    """Law of ``delta_0 - delta_1/2`` under the jump walk, restricted to ``[-truncate, truncate]``.

    The certified bound counts charged sites above ``threshold``: if the
    positive sites on the integers and the negative sites on the half
    integers strictly interleave, any ``p`` positive and ``m`` negative ones
    give ``2 min(p, m) - 1`` guaranteed alternations.
    """
    if truncate <= 0:
        raise ValueError("truncation radius must be positive")
    K = max(K, int(math.ceil(truncate)) + 2)
    plus: JumpDistribution = exact_jump_distribution(0.0, t, K)
    minus: JumpDistribution = exact_jump_distribution(0.5, t, K)
    sites = np.concatenate([plus.sites, minus.sites])
    weights = np.concatenate([plus.probabilities, -minus.probabilities])
    keep = (np.abs(sites) <= truncate) & (np.abs(weights) > threshold)
    order = np.argsort(sites[keep])
    s, w = sites[keep][order], weights[keep][order]
    mu_t = canonicalize(np.column_stack([s, w]))
    sg = np.sign(w)
    interleaved = bool(np.all(sg[1:] != sg[:-1])) if len(sg) else False
    p, m = int(np.sum(sg > 0)), int(np.sum(sg < 0))
    bound = 2 * min(p, m) - 1 if interleaved and min(p, m) > 0 else -1
    mu0 = canonicalize([(0.0, 1.0), (0.5, -1.0)])
    return CounterexampleReport(
        t=t,
        truncate=truncate,
        sites=s,
        weights=w,
        mu_crossings=crossings(mu0),
        truncated_crossings=crossings(mu_t),
        positive_sites=p,
        negative_sites=m,
        interleaved=interleaved,
        certified_bound=bound,
        leak=plus.leak + minus.leak,
    )


def check_counterexample() -> CheckResult:
    rep = counterexample_report(1.0, 3.5)
    ok = (
        rep.mu_crossings == 1
        and rep.positive_sites >= 7
        and rep.negative_sites >= 7
        and rep.interleaved
        and rep.certified_bound >= 13
        and rep.truncated_crossings >= rep.certified_bound
    )
    detail = (
        f"Sigma(mu)={rep.mu_crossings}; {rep.positive_sites} positive / {rep.negative_sites} negative "
        f"interleaved sites; certified >= {rep.certified_bound}, truncated count {rep.truncated_crossings}"
    )
    return CheckResult(9, "jump walk increases crossings", ok, detail)


# --------------------------------------------------------------------------
# 10: martingale diagnostics
# --------------------------------------------------------------------------


def check_martingales(reps: int = 250, map_fn: Callable = map) -> CheckResult:
    sc = load_scenario("martingale_mix")
    ens = run_ensemble(sc, reps=reps, map_fn=map_fn, keep_snapshots=False)
    grid = list(sc.t_grid)
    ok = True
    worst_z = 0.0
    worst_qv = -math.inf
    for fn in sc.functions:
        my = np.array([r.martingales[fn.label].at(grid)[0] for r in ens.replicas])
        mean = my.mean(axis=0)
        se = my.std(axis=0, ddof=1) / math.sqrt(reps)
        z = np.abs(mean) / np.where(se > 0, se, np.inf)
        worst_z = max(worst_z, float(z.max()))
        ok &= bool(np.all(np.abs(mean) <= 4 * se))
        qv = np.array([r.martingales[fn.label].at([0.0] + grid) for r in ens.replicas])
        dqy = np.diff(qv[:, 2, :], axis=1)
        dqz = np.diff(qv[:, 3, :], axis=1)
        diff = dqy - dqz
        d_mean = diff.mean(axis=0)
        d_se = diff.std(axis=0, ddof=1) / math.sqrt(reps)
        worst_qv = max(worst_qv, float(np.max(d_mean / np.where(d_se > 0, d_se, np.inf))))
        ok &= bool(np.all(d_mean <= 3 * d_se))
    detail = (
        f"{reps} replicas, {len(sc.functions)} functions, {len(grid)} checkpoints; "
        f"max |mean M|/SE = {worst_z:.2f} (<= 4); max QV excess = {worst_qv:.2f} SE (<= 3)"
    )
    return CheckResult(10, "martingale means and quadratic variations", ok, detail)


# --------------------------------------------------------------------------
# 11: kappa shift
# --------------------------------------------------------------------------


_SHIFT_RAW = {
    "process": {"a": "1", "b": "-x", "c": "0", "kappa": -2.0},
    "initial": {"atoms": [[-1.0, 1.0], [0.0, -1.0], [1.0, 1.0]]},
    "run": {"n": 500, "replicas": 5, "dt": 0.01, "t_grid": [0.25, 0.5, 1.0], "seed": 17},
    "pde": {"x_min": -10.0, "x_max": 10.0, "points": 1001, "dt": 0.002},
}


def check_kappa_shift() -> CheckResult:
    shifted = scenario_from_dict(_SHIFT_RAW, "shifted")
    # the same forward problem with the positive potential integrated directly
    plain_spec = ProcessSpec(alpha=shifted.process.alpha, beta=shifted.process.beta, gamma=parse_expr("1"))
    cfg = shifted.pde
    u0 = initial_grid(shifted.initial, cfg)
    a = solve_forward(shifted.process, u0, shifted.t_end, cfg, shifted.t_grid)
    b = solve_forward(plain_spec, u0, shifted.t_end, cfg, shifted.t_grid)
    rel = max(
        float(np.max(np.abs(ga.values - gb.values)) / max(np.max(np.abs(gb.values)), 1e-300)) for ga, gb in zip(a, b)
    )
    # the simulated dynamics with gamma = -1 written out directly
    direct_raw = {**_SHIFT_RAW, "process": {"alpha": "1", "beta": "x", "gamma": "-1"}}
    direct = scenario_from_dict(direct_raw, "direct")
    ea = run_ensemble(shifted, keep_snapshots=False)
    eb = run_ensemble(direct, keep_snapshots=False)
    same = bool(np.array_equal(ea.crossings(), eb.crossings()))
    ratio_ok = True
    for ra, rb in zip(ea.summary_rows(), eb.summary_rows()):
        factor = math.exp(2.0 * ra[0])
        ratio_ok &= all(math.isclose(x, factor * y, rel_tol=1e-12, abs_tol=0.0) for x, y in zip(ra[3:], rb[3:]))
    ok = rel <= 1e-10 and same and ratio_ok
    detail = f"PDE relative difference {rel:.2e} (<= 1e-10); crossing series identical: {same}; outputs rescaled by exp(-kappa t): {ratio_ok}"
    return CheckResult(11, "kappa shift leaves crossings unchanged", bool(ok), detail)


# --------------------------------------------------------------------------
# everything
# --------------------------------------------------------------------------


def run_all(quick: bool = False, map_fn: Callable = map, progress: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    """Run every check; ``quick`` uses reduced sizes and is not the acceptance gate."""
    jobs: list[Callable[[], list[CheckResult] | CheckResult]] = [
        lambda: check_random_invariants(20 if quick else 200, 5, map_fn=map_fn),
        lambda: check_counter_oracle(200 if quick else 1000),
        lambda: check_sampling_bound(10 if quick else 50, 500 if quick else 10_000),
        lambda: check_brownian_convergence(20_000 if quick else 100_000, map_fn=map_fn),
        lambda: check_three_bump(map_fn=map_fn, reps=3 if quick else None),
        lambda: check_pde_mc(n=20_000 if quick else 100_000, reps=3 if quick else 20, map_fn=map_fn),
        check_counterexample,
        lambda: check_martingales(60 if quick else 250, map_fn=map_fn),
        check_kappa_shift,
    ]
    results: list[CheckResult] = []
    for job in jobs:
        out = job()
        for r in out if isinstance(out, list) else [out]:
            results.append(r)
            if progress is not None:
                progress(r)
    return results
