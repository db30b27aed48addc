import csv
import json
import subprocess
import sys

import pytest

from zerocross.cli import EXIT_USAGE, SEED_ENV, main, resolve_seed
from zerocross.measures import read_measure_csv


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _only_dir(base):
    (d,) = [p for p in base.iterdir() if p.is_dir()]
    return d


def test_counterexample_output(tmp_path, capsys):
    assert main(["counterexample", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "Sigma(mu) = 1" in text
    assert "certified lower bound: Sigma(mu Q_t restricted) >= 13" in text
    assert "crossings of the restricted measure: 14" in text
    d = _only_dir(tmp_path)
    summary = {r["quantity"]: r["value"] for r in _rows(d / "counterexample_summary.csv")}
    assert summary["sigma_mu"] == "1" and int(summary["certified_lower_bound"]) >= 13
    assert (d / "counterexample.png").stat().st_size > 0
    mu = read_measure_csv(d / "counterexample_measure.csv")
    assert len(mu) == 15


def test_simulate_three_bump(tmp_path, capsys):
    args = ["simulate", "brownian_three_bump", "--n", "200", "--reps", "2", "--jobs", "1", "--out", str(tmp_path)]
    assert main(args) == 0
    d = _only_dir(tmp_path)
    expected = {"ensemble_summary.csv", "functionals.csv", "collisions.csv", "final_measure_rep0.csv",
                "crossings.png", "density.png", "run.json"}
    assert expected <= {p.name for p in d.iterdir()}
    rows = _rows(d / "ensemble_summary.csv")
    for rep in ("0", "1"):
        series = [int(r["crossings_Y"]) for r in rows if r["rep"] == rep]
        assert series[0] == 2
        assert all(b <= a for a, b in zip(series, series[1:]))
    mass = [r for r in _rows(d / "functionals.csv") if r["f_label"] == "mass"]
    assert abs(float(mass[0]["mean"]) - 1.0) <= 4 * float(mass[0]["se"])
    manifest = json.loads((d / "run.json").read_text())
    assert manifest["violations"] == 0 and manifest["seed"] == 20240601
    collisions = _rows(d / "collisions.csv")
    assert all(len(r["removed_plus"].split()) == len(r["removed_minus"].split()) for r in collisions)


def test_run_directories_are_content_addressed(tmp_path):
    base = ["simulate", "brownian_point", "--n", "20", "--reps", "1", "--jobs", "1", "--no-plots", "--out", str(tmp_path)]
    main(base)
    main(base)
    assert len(list(tmp_path.iterdir())) == 1
    main(base + ["--seed", "99"])
    assert len(list(tmp_path.iterdir())) == 2


def test_seed_resolution(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    assert resolve_seed(None, 7) == 7
    monkeypatch.setenv(SEED_ENV, "13")
    assert resolve_seed(None, 7) == 13
    assert resolve_seed(3, 7) == 3
    monkeypatch.setenv(SEED_ENV, "abc")
    with pytest.raises(ValueError):
        resolve_seed(None, 7)


def test_env_seed_reaches_the_manifest(tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "4242")
    main(["simulate", "brownian_point", "--n", "10", "--reps", "1", "--jobs", "1", "--no-plots", "--out", str(tmp_path)])
    manifest = json.loads((_only_dir(tmp_path) / "run.json").read_text())
    assert manifest["seed"] == 4242


def test_trajectories(tmp_path):
    main(["simulate", "repulsive_killed", "--n", "6", "--reps", "2", "--jobs", "1", "--no-plots",
          "--trajectories", "--out", str(tmp_path)])
    rows = _rows(_only_dir(tmp_path) / "trajectories.csv")
    assert len(rows) == 2 * 6 * 3
    assert {r["status"] for r in rows} <= {"alive", "annihilated", "cemetery"}


def test_jump_walk_is_not_a_violation(tmp_path, capsys):
    code = main(["simulate", "counterexample_jump", "--n", "50", "--reps", "2", "--jobs", "1", "--no-plots",
                 "--out", str(tmp_path)])
    assert code == 0


def test_errors_exit_with_usage_code(tmp_path, capsys):
    assert main(["simulate", "no_such_scenario", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "no scenario file or built-in" in capsys.readouterr().err
    bad = tmp_path / "bad.toml"
    bad.write_text('[process]\ngamma = "1"\n[initial]\natoms = [[0.0, 1.0]]\n[run]\nt_grid = [1.0]\n')
    assert main(["simulate", str(bad), "--out", str(tmp_path)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "gamma must be ≤ 0" in err and "seed" in err
    assert main(["pde", "brownian_point", "--out", str(tmp_path)]) == EXIT_USAGE
    with pytest.raises(SystemExit):
        main(["simulate", "--jobs", "0", "brownian_point"])


def test_pde(tmp_path, capsys):
    assert main(["pde", "sine_interval", "--out", str(tmp_path)]) == 0
    d = _only_dir(tmp_path)
    counts = [int(r["crossings"]) for r in _rows(d / "pde_crossings.csv")]
    assert counts[0] == 2 and all(b <= a for a, b in zip(counts, counts[1:]))
    assert (d / "pde.png").exists()
    assert len(_rows(d / "pde_snapshots.csv")) == 401 * 5


def test_crossings_from_scenario_and_file(tmp_path, capsys):
    assert main(["crossings", "sine_interval", "--out", str(tmp_path)]) == 0
    assert "crossings = 2" in capsys.readouterr().out
    path = tmp_path / "mu.csv"
    path.write_text("position,weight\n0,1\n1,-1\n2,1\n3,-2\n")
    assert main(["crossings", "--measure", str(path), "--out", str(tmp_path / "m")]) == 0
    row = _rows(_only_dir(tmp_path / "m") / "crossings.csv")[0]
    assert row["crossings"] == row["crossings_bruteforce"] == "3"


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "zerocross", "--version"], capture_output=True, text=True)
    assert done.returncode == 0 and "zerocross" in done.stdout
