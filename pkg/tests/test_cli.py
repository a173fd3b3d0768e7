import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from hyperflock import cli
from hyperflock.config import ConfigError, load_config

import oracles


def write(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


def run(tmp_path, doc, command, *extra, name="run.json"):
    cfg = write(tmp_path / name, doc)
    out = tmp_path / "out"
    code = cli.main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


SPHERE4 = {
    "surface": {"kind": "sphere", "dim": 3},
    "graph": {"kind": "complete", "n": 4},
    "flow": {"dt": 0.01, "t_end": 200.0, "record_every": 50},
}


def test_simulate_sphere_converges(tmp_path):
    code, out = run(tmp_path, SPHERE4, "simulate", "--seed", "1")
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] is True and summary["final_V"] <= 1e-8
    assert summary["max_constraint_drift"] < 1e-6
    rows = list(csv.reader((out / "trajectory.csv").open()))
    assert rows[0] == ["t", "agent", "coord0", "coord1", "coord2", "V"]
    assert all(abs(sum(float(v) ** 2 for v in r[2:5]) - 1) <= 2e-9 for r in rows[1:])


def test_simulate_splay_file_does_not_converge(tmp_path):
    write(tmp_path / "splay.json", {"points": oracles.splay_circle(10).tolist()})
    doc = {
        "surface": {"kind": "sphere", "dim": 2},
        "graph": {"kind": "ring", "n": 10},
        "flow": {"t_end": 20.0, "stop_early": False, "record_every": 100},
        "experiment": {"init": "file", "init_file": "splay.json"},
    }
    code, out = run(tmp_path, doc, "simulate")
    assert code == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["converged"] is False
    assert abs(s["final_V"] - s["initial_V"]) <= 1e-6


def test_simulate_splay_init_mode(tmp_path):
    doc = {
        "surface": {"kind": "ellipsoid", "A": [[2, 0, 0], [0, 1, 0], [0, 0, 3]]},
        "graph": {"kind": "ring", "n": 6},
        "flow": {"t_end": 1.0},
        "experiment": {"init": "splay", "perturbation": 1e-3, "seed": 4},
    }
    code, _ = run(tmp_path, doc, "simulate")
    assert code == 0


def test_missing_surface_exit_2(tmp_path):
    code, _ = run(tmp_path, {"graph": {"kind": "ring", "n": 4}}, "simulate")
    assert code == 2


def test_unparseable_config_exit_2(tmp_path):
    (tmp_path / "bad.json").write_text("{ not json")
    assert cli.main(["simulate", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) == 2


def test_config_error_paths(tmp_path):
    cfg = write(tmp_path / "c.json", {"surface": {"kind": "sphere", "dim": 1.5}, "flow": {"dt": 0}})
    with pytest.raises(ConfigError) as info:
        load_config(cfg)
    msg = str(info.value)
    assert "surface.dim" in msg and "flow.dt" in msg


@pytest.mark.parametrize(
    "doc",
    [
        {"surface": {"kind": "ellipsoid", "A": [[1, 0], [0, -1]]}, "graph": {"kind": "path", "n": 2}},
        {"surface": {"kind": "sphere"}, "graph": {"kind": "edges", "n": 4, "edges": [[0, 1], [2, 3]]}},
        {"surface": {"kind": "sphere"}, "graph": {"kind": "ring", "n": 2}},
        {"surface": {"kind": "sphere"}},
    ],
)
def test_semantic_config_errors_exit_2(tmp_path, doc):
    assert run(tmp_path, doc, "simulate")[0] == 2


def test_numerical_failure_exit_3(tmp_path):
    # first torus agent sits where <x, grad c> = 0, so the oblique projector is undefined
    cp = -0.25
    p0 = [2.0 + 0.5 * cp, 0.0, 0.5 * np.sqrt(1 - cp**2)]
    write(tmp_path / "x.json", {"points": [p0, [2.5, 0.0, 0.0]]})
    doc = {
        "surface": {"kind": "torus"},
        "graph": {"kind": "complete", "n": 2},
        "flow": {"field": "zhu"},
        "experiment": {"init": "file", "init_file": "x.json"},
    }
    assert run(tmp_path, doc, "simulate")[0] == 3


def test_basin_report(tmp_path):
    doc = {**SPHERE4, "flow": {"t_end": 100.0}, "experiment": {"trials": 12, "seed": 3}}
    code, out = run(tmp_path, doc, "basin")
    assert code == 0
    rep = json.loads((out / "basin.json").read_text())
    assert rep["n_trials"] == 12 and rep["fraction"] == rep["n_converged"] / 12
    assert [t["seed"] for t in rep["trials"]] == list(range(3, 15))
    assert rep["fraction"] == 1.0 and rep["failures"] == []


def test_basin_trial_replays_from_seed(tmp_path):
    doc = {**SPHERE4, "flow": {"t_end": 100.0}, "experiment": {"trials": 3, "seed": 10}}
    _, out = run(tmp_path, doc, "basin")
    trial = json.loads((out / "basin.json").read_text())["trials"][2]
    _, out2 = run(tmp_path, {**doc, "flow": {"t_end": 100.0, "record_every": 10**6}}, "simulate", "--seed", str(trial["seed"]))
    single = json.loads((out2 / "summary.json").read_text())
    assert single["final_V"] == trial["final_V"]


def test_basin_min_fraction_gate(tmp_path):
    doc = {
        "surface": {"kind": "sphere", "dim": 2},
        "graph": {"kind": "ring", "n": 10},
        "flow": {"t_end": 100.0},
        "experiment": {"trials": 20, "seed": 0, "min_fraction": 1.0},
    }
    code, out = run(tmp_path, doc, "basin")
    rep = json.loads((out / "basin.json").read_text())
    assert rep["fraction"] < 1.0
    assert code == 1


@pytest.mark.parametrize(
    "surface, which, expected",
    [
        ({"kind": "sphere", "dim": 3}, "assumption1", 0),
        ({"kind": "torus", "R": 2.0, "r": 0.5}, "convexity", 1),
        ({"kind": "sphere", "dim": 2}, "alpha", 1),
        ({"kind": "sphere", "dim": 3}, "alpha", 0),
    ],
)
def test_check_exit_codes(tmp_path, surface, which, expected):
    code, out = run(tmp_path, {"surface": surface}, "check", "--which", which)
    assert code == expected
    rep = json.loads((out / f"check_{which}.json").read_text())
    assert rep["passes"] is (expected == 0)


@pytest.mark.parametrize(
    "points, n_agents, graph, dim, label, trace",
    [
        ([[0, 0, 1], [0, 0, -1]], 2, "complete", 3, "exponentially_unstable", 8.0),
        ([[0.6, 0.8, 0], [0.6, 0.8, 0]], 2, "complete", 3, "consensus", 0.0),
        ([[1, 0], [0, 1], [-1, 0], [0, -1]], 4, "ring", 2, "inconclusive", 0.0),
    ],
)
def test_classify(tmp_path, points, n_agents, graph, dim, label, trace):
    write(tmp_path / "state.json", {"points": points})
    doc = {
        "surface": {"kind": "sphere", "dim": dim},
        "graph": {"kind": graph, "n": n_agents},
        "experiment": {"state_file": "state.json"},
    }
    code, out = run(tmp_path, doc, "classify")
    assert code == 0
    rep = json.loads((out / "classify.json").read_text())
    assert rep["classification"] == label
    assert rep["trace_M"] == pytest.approx(trace, abs=1e-9)
    for key in ("surface", "graph", "equilibrium", "lambdas", "eigs", "trace_M", "classification", "margins"):
        assert key in rep


def test_classify_not_equilibrium_exit_4(tmp_path, capsys):
    write(tmp_path / "state.json", {"points": [[1, 0, 0], [0, 1, 0]]})
    doc = {"surface": {"kind": "sphere"}, "graph": {"kind": "complete", "n": 2}}
    code, _ = run(tmp_path, doc, "classify", "--state", str(tmp_path / "state.json"))
    assert code == 4
    assert "residual" in capsys.readouterr().err


def _equivalence_doc(A, t_end=10.0):
    return {
        "surface": {"kind": "ellipsoid", "A": A},
        "graph": {"kind": "complete", "n": 5},
        "flow": {"dt": 1e-3, "t_end": t_end, "record_every": 100},
        "experiment": {"seed": 2},
    }


def test_equivalence_identity(tmp_path):
    code, out = run(tmp_path, _equivalence_doc(np.eye(3).tolist(), t_end=2.0), "equivalence")
    rep = json.loads((out / "equivalence.json").read_text())
    assert code == 0 and rep["max_deviation"] <= 1e-12


def test_equivalence_diag(tmp_path):
    code, out = run(tmp_path, _equivalence_doc([[4, 0, 0], [0, 1, 0], [0, 0, 1]]), "equivalence")
    rep = json.loads((out / "equivalence.json").read_text())
    assert code == 0 and rep["passes"] and rep["dt"] == 1e-3


def test_equivalence_stiff_case_reports(tmp_path):
    A = oracles.random_spd(np.random.default_rng(0), 3, 100.0)
    code, out = run(tmp_path, _equivalence_doc(A.tolist(), t_end=2.0), "equivalence")
    rep = json.loads((out / "equivalence.json").read_text())
    assert code in (0, 1)
    assert rep["condition_number"] == pytest.approx(100.0)
    assert np.isfinite(rep["max_deviation"])


def test_equivalence_needs_ellipsoid(tmp_path):
    doc = {"surface": {"kind": "sphere"}, "graph": {"kind": "complete", "n": 3}}
    assert run(tmp_path, doc, "equivalence")[0] == 2


def test_outputs_byte_identical_across_runs(tmp_path):
    doc = {**SPHERE4, "flow": {"t_end": 20.0, "record_every": 20}, "experiment": {"trials": 4, "seed": 8}}
    blobs = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        d.mkdir()
        cfg = write(d / "run.json", doc)
        for cmd in ("simulate", "basin"):
            assert cli.main([cmd, "--config", str(cfg), "--out", str(d / "out")]) == 0
        blobs.append({p.name: p.read_bytes() for p in sorted((d / "out").iterdir())})
    assert blobs[0] == blobs[1]


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path / "c.json", {"surface": {"kind": "sphere", "dim": 3}, "experiment": {"n_pairs": 50}})
    proc = subprocess.run(
        [sys.executable, "-m", "hyperflock", "check", "--config", str(cfg), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["violated"] is False
