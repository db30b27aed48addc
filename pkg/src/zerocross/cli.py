"""Command line interface: ``zerocross <subcommand> ...``.

Every run writes into ``<out>/<name>-<digest>/`` where the digest hashes the
scenario definition and the seed, so reruns never mix artifacts.  Exit codes:
0 success, 1 failed validation, 2 bad input, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .acceptance import MASS_THRESHOLD, counterexample_report, run_all
from .dynamics import JUMP_WALK
from .expr import ONE
from .fokker_planck import crossing_series, initial_grid, solve_forward
from .measures import (
    EnumerationLimitError,
    canonicalize,
    crossings,
    crossings_bruteforce,
    read_measure_csv,
    scale,
    write_measure_csv,
)
from .montecarlo import (
    TestFunction,
    classify_violations,
    empirical_signed_density,
    estimate_pushforward,
    run_ensemble,
)
from .particles import measure_Y_frozen
from .scenario import Scenario, ScenarioError, builtin_names, load_scenario

SEED_ENV = "ZEROCROSS_SEED"
EXIT_FAILED, EXIT_USAGE, EXIT_VIOLATION = 1, 2, 3

log = logging.getLogger("zerocross")


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def resolve_seed(flag: int | None, default: int) -> int:
    """``--seed`` wins; otherwise the environment override; otherwise the scenario."""
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ScenarioError(f"{SEED_ENV}={env!r} is not an integer") from None
    return default


@contextmanager
def worker_map(jobs: int):
    if jobs <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield pool.map


def run_dir(base: str | Path | None, label: str, digest: str) -> Path:
    path = Path(base or "runs") / f"{label}-{digest}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
    return path


def write_manifest(path: Path, **info) -> None:
    (path / "run.json").write_text(json.dumps(info, indent=2, sort_keys=True, default=str) + "\n")


def _load(args) -> Scenario:
    name = args.scenario_flag or args.scenario
    if not name:
        raise ScenarioError(f"no scenario given (built-ins: {', '.join(builtin_names())})")
    sc = load_scenario(name)
    overrides = {}
    if getattr(args, "n", None) is not None:
        overrides["n"] = args.n
    if getattr(args, "reps", None) is not None:
        overrides["replicas"] = args.reps
    overrides["seed"] = resolve_seed(args.seed, sc.seed)
    return sc.with_overrides(**overrides)


def _reproduce(cmd: str, sc: Scenario) -> str:
    return f"reproduce: zerocross {cmd} --scenario {sc.name} --seed {sc.seed} --n {sc.n} --reps {sc.replicas}"


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    sc = _load(args)
    out = run_dir(args.out, sc.name, sc.digest())
    functions = (TestFunction("mass", ONE, ONE),) + tuple(sc.functions)
    log.info("simulate %s: n=%d reps=%d seed=%d -> %s", sc.name, sc.n, sc.replicas, sc.seed, out)
    with worker_map(args.jobs) as map_fn:
        ens = run_ensemble(
            sc,
            map_fn=map_fn,
            check_invariants=not args.no_check,
            keep_state=True,
            keep_trajectories=args.trajectories,
        )

    write_csv(
        out / "ensemble_summary.csv",
        ["t", "rep", "crossings_Y", "mass_Y_plus", "mass_Y_minus", "mass_Z", "cemetery_Z"],
        ens.summary_rows(),
    )
    rows = []
    for t in ens.times:
        for fn in functions:
            mean, se = estimate_pushforward(ens, float(t), fn.f)
            rows.append((float(t), fn.label, mean, se, ens.n, ens.reps))
    write_csv(out / "functionals.csv", ["t", "f_label", "mean", "se", "n", "reps"], rows)
    write_csv(
        out / "collisions.csv",
        ["rep", "S_m", "location", "removed_plus", "removed_minus"],
        (
            (r.rep, c.time, c.location, " ".join(map(str, c.removed_plus)), " ".join(map(str, c.removed_minus)))
            for r in ens.replicas
            for c in r.final_state.collisions
        ),
    )
    if args.trajectories:
        write_csv(
            out / "trajectories.csv",
            ["rep", "time", "particle_id", "sign", "status", "live_x", "frozen_x"],
            ((r.rep,) + row for r in ens.replicas for row in r.trajectories),
        )
    first = ens.replicas[0].final_state
    write_measure_csv(scale(measure_Y_frozen(first), ens.scale(first.time)), out / "final_measure_rep0.csv")
    if not args.no_plots:
        from .plotting import plot_crossing_series, plot_snapshots

        plot_crossing_series(ens.times, ens.crossings(), out / "crossings.png", f"{sc.name} (seed {sc.seed})")
        lo, hi = sc.process.probe_window()
        pos_all = np.concatenate([p for r in ens.replicas for p, _ in r.snapshots] + [np.zeros(1)])
        lo, hi = max(lo, float(pos_all.min())), min(hi, float(pos_all.max()))
        width = max((hi - lo) / 80, 1e-6)
        dens = [empirical_signed_density(ens, float(t), width, lo, hi + width) for t in ens.times[1:]]
        plot_snapshots(dens, out / "density.png", f"{sc.name}: replica-averaged signed density")

    violations = ens.violations()
    write_manifest(out, command="simulate", scenario=sc.name, seed=sc.seed, digest=sc.digest(), violations=len(violations))
    print(f"{sc.name}: {ens.reps} replicas, crossings at t={ens.times[-1]:g}: {ens.crossings()[:, -1].tolist()}")
    print(f"wrote {out}")
    if violations:
        kinds = classify_violations(violations)
        fatal = violations
        if sc.process.kind == JUMP_WALK:
            # the jump walk is not a diffusion and may gain crossings; only conservation is binding
            fatal = kinds["conservation"]
            if kinds["monotone"] or kinds["subsequence"]:
                print(f"note: {len(kinds['monotone']) + len(kinds['subsequence'])} crossing increases (expected for the jump walk)")
        if fatal:
            for v in fatal[:10]:
                print(f"violation: {v}", file=sys.stderr)
            print(_reproduce("simulate", sc), file=sys.stderr)
            return EXIT_VIOLATION
    return 0


def cmd_pde(args) -> int:
    sc = _load(args)
    if sc.pde is None:
        raise ScenarioError(f"{sc.name}: scenario has no [pde] section")
    if not sc.process.is_diffusion:
        raise ScenarioError(f"{sc.name}: the forward solver needs a diffusion")
    out = run_dir(args.out, sc.name, sc.digest())
    series = solve_forward(sc.process, initial_grid(sc.initial, sc.pde), sc.t_end, sc.pde, sc.t_grid)
    counts = crossing_series(series, args.zero_tol)
    write_csv(out / "pde_snapshots.csv", ["t", "x", "u"], ((g.time, float(x), float(u)) for g in series for x, u in zip(g.x, g.values)))
    write_csv(out / "pde_crossings.csv", ["t", "crossings"], ((g.time, c) for g, c in zip(series, counts)))
    if not args.no_plots:
        from .plotting import plot_snapshots

        plot_snapshots(series[1:], out / "pde.png", f"{sc.name}: forward equation")
    write_manifest(out, command="pde", scenario=sc.name, seed=sc.seed, digest=sc.digest(), crossings=counts)
    print(f"{sc.name}: PDE crossing series {counts}")
    print(f"wrote {out}")
    if any(b > a for a, b in zip(counts, counts[1:])):
        print(f"violation: PDE crossing series increased {counts}", file=sys.stderr)
        print(_reproduce("pde", sc), file=sys.stderr)
        return EXIT_VIOLATION
    return 0


def cmd_crossings(args) -> int:
    if args.measure:
        mu = read_measure_csv(args.measure)
        source = str(args.measure)
        label = Path(args.measure).stem
        digest = hashlib.sha256(Path(args.measure).read_bytes()).hexdigest()[:12]
        fast = crossings(mu)
        try:
            brute = crossings_bruteforce(mu, n_max=args.n_max)
        except EnumerationLimitError:
            brute = crossings_bruteforce(mu, mode="dp")
    else:
        sc = _load(args)
        source, label, digest = sc.name, sc.name, sc.digest()
        fast = sc.initial.crossings()
        brute = crossings_bruteforce(sc.initial.atoms, n_max=args.n_max) if sc.initial.is_atomic else fast
    out = run_dir(args.out, label, digest)
    write_csv(out / "crossings.csv", ["source", "crossings", "crossings_bruteforce"], [(source, fast, brute)])
    print(f"{source}: crossings = {fast} (brute force {brute})")
    if fast != brute:
        print("violation: crossing counters disagree", file=sys.stderr)
        return EXIT_VIOLATION
    return 0


def cmd_counterexample(args) -> int:
    rep = counterexample_report(args.t, args.truncate, args.K, args.threshold)
    key = json.dumps({"t": args.t, "truncate": args.truncate, "K": args.K, "threshold": args.threshold})
    out = run_dir(args.out, "counterexample", hashlib.sha256(key.encode()).hexdigest()[:12])
    write_measure_csv(canonicalize(np.column_stack([rep.sites, rep.weights])), out / "counterexample_measure.csv")
    summary = [
        ("t", rep.t),
        ("truncate", rep.truncate),
        ("sigma_mu", rep.mu_crossings),
        ("positive_sites", rep.positive_sites),
        ("negative_sites", rep.negative_sites),
        ("interleaved", int(rep.interleaved)),
        ("certified_lower_bound", rep.certified_bound),
        ("truncated_crossings", rep.truncated_crossings),
        ("leak", rep.leak),
    ]
    write_csv(out / "counterexample_summary.csv", ["quantity", "value"], summary)
    if not args.no_plots:
        from .plotting import plot_atoms

        plot_atoms(rep.sites, rep.weights, out / "counterexample.png", f"law at t={rep.t:g} on [-{rep.truncate:g}, {rep.truncate:g}]")
    print(f"Sigma(mu) = {rep.mu_crossings} for mu = delta_0 - delta_1/2")
    print(
        f"at t = {rep.t:g} on [-{rep.truncate:g}, {rep.truncate:g}]: {rep.positive_sites} positive and "
        f"{rep.negative_sites} negative charged sites, interleaved: {rep.interleaved}"
    )
    print(f"certified lower bound: Sigma(mu Q_t restricted) >= {rep.certified_bound}")
    print(f"crossings of the restricted measure: {rep.truncated_crossings}")
    print(f"wrote {out}")
    return 0


def cmd_validate(args) -> int:
    print(f"{'':6} {'#':>2}  check")
    rows = []

    def show(r):
        rows.append((r.number, r.title, "pass" if r.passed else "fail", r.detail))
        print(r.line(), flush=True)

    with worker_map(args.jobs) as map_fn:
        results = run_all(quick=args.quick, map_fn=map_fn, progress=show)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "validate.csv", ["criterion", "title", "result", "detail"], rows)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_FAILED if failed else 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zerocross", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"RNG seed (else ${SEED_ENV}, else the scenario's)")
    common.add_argument("--out", default=None, help="base output directory (default: runs; validate writes only when given)")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    common.add_argument("--no-plots", action="store_true", help="skip the PNG figures")

    def with_scenario(sp):
        sp.add_argument("scenario", nargs="?", help="scenario file or built-in name")
        sp.add_argument("--scenario", dest="scenario_flag", help="same as the positional argument")
        return sp

    s = with_scenario(sub.add_parser("simulate", parents=[common], help="run particle replicas"))
    s.add_argument("--n", type=int, help="particles per replica")
    s.add_argument("--reps", type=int, help="number of replicas")
    s.add_argument("--no-check", action="store_true", help="skip per-step invariant checks")
    s.add_argument("--trajectories", action="store_true", help="log every particle at every grid time")
    s.set_defaults(func=cmd_simulate)

    s = with_scenario(sub.add_parser("pde", parents=[common], help="solve the forward equation"))
    s.add_argument("--zero-tol", type=float, default=MASS_THRESHOLD, help="values at or below this count as zero")
    s.set_defaults(func=cmd_pde)

    s = with_scenario(sub.add_parser("crossings", parents=[common], help="count crossings of a measure"))
    s.add_argument("--measure", help="measure CSV (position,weight)")
    s.add_argument("--n-max", type=int, default=12, help="atom limit for brute-force enumeration")
    s.set_defaults(func=cmd_crossings)

    s = sub.add_parser("counterexample", parents=[common], help="jump walk from delta_0 - delta_1/2")
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--truncate", type=float, default=3.5, help="restrict to [-truncate, truncate]")
    s.add_argument("--K", type=int, default=40, help="state-space radius for the exact law")
    s.add_argument("--threshold", type=float, default=MASS_THRESHOLD, help="minimum mass of a charged site")
    s.set_defaults(func=cmd_counterexample)

    s = sub.add_parser("validate", parents=[common], help="run the acceptance checks")
    s.add_argument("--quick", action="store_true", help="reduced sizes (smoke test, not the acceptance gate)")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    func: Callable = args.func
    try:
        return func(args)
    except (ScenarioError, ValueError) as exc:
        name = getattr(args, "scenario_flag", None) or getattr(args, "scenario", None)
        where = f" (scenario {name}, seed {args.seed})" if name else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
