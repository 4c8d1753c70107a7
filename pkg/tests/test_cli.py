import json
import subprocess
import sys

import numpy as np
import pytest

from dhmlab.cli import main
from dhmlab.grid import make_grid
from dhmlab.snapshot import write_snapshot


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


SMALL_TORUS = {"topology": "torus", "Lx": 1.0, "Ly": 1.0, "nx": 16, "ny": 16}


def test_check_passes(capsys):
    code, out, _ = run(["check"], capsys)
    assert code == 0 and "FAIL" not in out and "clifford anticommutation" in out


def test_check_fault_injection(capsys):
    code, out, _ = run(["check", "--inject-fault", "g2-sign", "--json"], capsys)
    payload = json.loads(out)
    assert code == 1
    assert "clifford anticommutation" in payload["failed"]
    assert not payload["passed"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "dhmlab", "check", "--json"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["passed"]


@pytest.mark.parametrize("cfg,key", [
    ({"version": 1, "grid": dict(SMALL_TORUS, nz=3), "mode": "harmonic"}, "grid.nz"),
    ({"version": 1, "grid": SMALL_TORUS, "mode": "harmonic", "solver": {"stepp": 1}},
     "solver.stepp"),
    ({"version": 1, "grid": SMALL_TORUS, "mode": "sideways"}, "mode"),
    ({"version": 1, "mode": "harmonic"}, "grid"),
    ({"version": 2, "grid": SMALL_TORUS, "mode": "harmonic"}, "version"),
])
def test_schema_errors_exit_2_with_key_path(tmp_path, capsys, cfg, key):
    code, _, err = run(["solve", "--config", write(tmp_path, "c.json", cfg),
                        "--out", str(tmp_path)], capsys)
    assert code == 2
    assert f"config error at {key}:" in err


def test_unreadable_config(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{not json")
    code, _, err = run(["solve", "--config", str(tmp_path / "bad.json")], capsys)
    assert code == 2 and "not valid JSON" in err
    code, _, _ = run(["solve", "--config", str(tmp_path / "missing.json")], capsys)
    assert code == 2


def test_solve_writes_outputs_and_is_reproducible(tmp_path, capsys):
    cfg = {"version": 1, "grid": SMALL_TORUS, "mode": "coupled",
           "init": {"type": "random", "energy": 0.05},
           "solver": {"max_iters": 30, "tol": 1e-12, "seed": 5}}
    path = write(tmp_path, "c.json", cfg)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code, text, err = run(["solve", "--config", path, "--out", str(out)], capsys)
        assert code == 0 and "created output directory" in err
        assert (out / "final.dhms").exists() and (out / "final.dhms.json").exists()
        outs.append((out / "trace.csv").read_bytes())
    assert outs[0] == outs[1]
    code, _, _ = run(["solve", "--config", path, "--out", str(tmp_path / "s"), "--seed", "6"],
                     capsys)
    assert (tmp_path / "s" / "trace.csv").read_bytes() != outs[0]


def test_solve_vanishing_report(tmp_path, capsys):
    cfg = {"version": 1, "grid": SMALL_TORUS, "mode": "vanishing",
           "solver": {"max_iters": 3000, "tol": 1e-5, "seed": 2},
           "vanishing": {"budget": 0.05, "trials": 2}}
    code, out, _ = run(["solve", "--config", write(tmp_path, "v.json", cfg),
                        "--out", str(tmp_path)], capsys)
    assert code == 0 and "2/2 constant" in out
    assert (tmp_path / "vanishing.csv").read_text().startswith("trial,")


def test_solve_divergence_exit_3(tmp_path, capsys):
    cfg = {"version": 1, "grid": SMALL_TORUS, "mode": "harmonic",
           "init": {"type": "random", "energy": 1.0, "spinor_share": 0.0},
           "solver": {"cfl": 3.0, "max_iters": 500}}
    code, _, err = run(["solve", "--config", write(tmp_path, "d.json", cfg),
                        "--out", str(tmp_path)], capsys)
    assert code == 3 and "diverged" in err


def test_solve_snapshot_restart(tmp_path, capsys):
    g = make_grid("torus", 1.0, 1.0, 16, 16)
    phi = np.zeros(g.shape + (3,))
    phi[..., 2] = 1.0
    snap = write_snapshot(tmp_path / "start.dhms", g, phi=phi)
    cfg = {"version": 1, "grid": SMALL_TORUS, "mode": "harmonic",
           "init": {"type": "snapshot", "path": str(snap)}}
    code, out, _ = run(["solve", "--config", write(tmp_path, "r.json", cfg),
                        "--out", str(tmp_path / "o"), "--json"], capsys)
    assert code == 0 and json.loads(out)["converged"]


def test_bubble_family_and_two_bubbles(tmp_path, capsys):
    grid = {"topology": "rectangle", "Lx": 8.0, "Ly": 8.0, "nx": 256, "ny": 256}
    cfg = {"version": 1, "grid": grid,
           "family": {"lambdas": [1.0, 0.5, 0.35], "with_spinor": True},
           "identity": {"delta": 2.0, "R": 1.0},
           "regularity": {"radius_factor": 0.15}}
    out = tmp_path / "fam"
    code, text, _ = run(["bubble", "--config", write(tmp_path, "f.json", cfg),
                         "--out", str(out)], capsys)
    assert code == 0 and "E_disk/8pi" in text
    rows = (out / "identity.csv").read_text().splitlines()
    assert rows[0] == "lambda,delta,R,e_disk,e_annulus,e_spinor_disk,e_spinor_annulus,e_total"
    ratios = [float(r.split(",")[3]) / (8 * np.pi) for r in rows[1:]]
    assert len(ratios) == 3 and ratios == sorted(ratios)
    assert len(json.loads((out / "regularity.json").read_text())) == 3

    cfg = {"version": 1, "grid": grid,
           "bubbles": [{"center": [-1.5, 0.0], "scale": 0.25},
                       {"center": [1.5, 0.5], "scale": 0.3}]}
    code, _, _ = run(["bubble", "--config", write(tmp_path, "t.json", cfg),
                      "--out", str(tmp_path / "two")], capsys)
    assert code == 0
    assert len(json.loads((tmp_path / "two" / "blowup.json").read_text())["points"]) == 2


def test_bubble_under_resolved_is_input_error(tmp_path, capsys):
    grid = {"topology": "rectangle", "Lx": 8.0, "Ly": 8.0, "nx": 32, "ny": 32}
    cfg = {"version": 1, "grid": grid, "family": {"lambdas": [0.1]}}
    code, _, err = run(["bubble", "--config", write(tmp_path, "u.json", cfg),
                        "--out", str(tmp_path)], capsys)
    assert code == 2 and "under-resolved" in err


def test_bubble_needs_family_or_bubbles(tmp_path, capsys):
    grid = {"topology": "rectangle", "Lx": 8.0, "Ly": 8.0, "nx": 32, "ny": 32}
    code, _, _ = run(["bubble", "--config", write(tmp_path, "n.json", {"version": 1, "grid": grid}),
                      "--out", str(tmp_path)], capsys)
    assert code == 2


def test_conserve_constant_and_topology(tmp_path, capsys):
    g = make_grid("torus", 1.0, 1.0, 16, 16)
    phi = np.zeros(g.shape + (3,))
    phi[..., 2] = 1.0
    snap = write_snapshot(tmp_path / "c.dhms", g, phi=phi)
    code, out, _ = run(["conserve", str(snap), "--potential", "--json"], capsys)
    row = json.loads(out)["rows"][0]
    assert code == 0 and row["divergence"] == 0 and row["wente"] == 0

    r = make_grid("rectangle", 1.0, 1.0, 16, 16)
    phi = np.zeros(r.shape + (3,))
    phi[..., 2] = 1.0
    rsnap = write_snapshot(tmp_path / "r.dhms", r, phi=phi)
    code, _, err = run(["conserve", str(rsnap), "--potential"], capsys)
    assert code == 4 and "torus" in err
    code, _, _ = run(["conserve", str(rsnap)], capsys)
    assert code == 0


def test_conserve_refinement_csv(tmp_path, capsys):
    paths = []
    for n in (32, 64):
        cfg = {"version": 1, "grid": dict(SMALL_TORUS, nx=n, ny=n), "mode": "harmonic",
               "init": {"type": "elliptic", "scale": 0.3, "center": [0.01, 0.02]},
               "solver": {"max_iters": 0}}
        out = tmp_path / f"e{n}"
        assert run(["solve", "--config", write(tmp_path, f"e{n}.json", cfg),
                    "--out", str(out)], capsys)[0] == 0
        paths.append(str(out / "final.dhms"))
    code, _, _ = run(["conserve", *paths, "--potential", "--out", str(tmp_path / "c")], capsys)
    lines = (tmp_path / "c" / "conserve.csv").read_text().splitlines()
    assert code == 0 and lines[0].startswith("nx,h,divergence,ratio_divergence")
    assert float(lines[2].split(",")[3]) > 3.0
