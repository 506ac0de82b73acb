import json
import math
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from chordwalk.cli import ConfigError, load_config, main, parse_config
from chordwalk.diagnostics import effective_sample_size

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, payload, name="exp.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload, indent=2))
    return path


def ball_sampling(steps, seed=5, **extra):
    return {"sampler": "hit-and-run", "seed": seed, "steps": steps,
            "body": {"type": "ball", "center": [0, 0, 0], "radius": 1}, **extra}


def read_trajectory(path):
    return np.loadtxt(path, delimiter=",", comments="#", skiprows=2)


def test_sample_zero_steps(tmp_path):
    cfg = write(tmp_path, ball_sampling(0, initial=[0.1, 0.2, 0.3]))
    assert main(["sample", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=") and lines[0].endswith("seed=5")
    assert lines[1] == "step,x1,x2,x3"
    assert lines[2:] == ["0,0.10000000000000001,0.20000000000000001,0.29999999999999999"]


def test_sample_is_byte_identical(tmp_path):
    cfg = write(tmp_path, ball_sampling(200))
    for out in ("a", "b"):
        assert main(["sample", "--config", str(cfg), "--out", str(tmp_path / out)]) == 0
    assert (tmp_path / "a/trajectory.csv").read_bytes() == (tmp_path / "b/trajectory.csv").read_bytes()
    other = write(tmp_path, ball_sampling(200, seed=6), "other.json")
    main(["sample", "--config", str(other), "--out", str(tmp_path / "c")])
    assert (tmp_path / "a/trajectory.csv").read_bytes() != (tmp_path / "c/trajectory.csv").read_bytes()


def test_sample_uniform_ball_means(tmp_path):
    assert main(["sample", "--config", str(CONFIGS / "sample_ball.json"), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    traj = read_trajectory(tmp_path / "trajectory.csv")[:, 1:]
    assert traj.shape == (100_001, 3)
    np.testing.assert_allclose(summary["means"], traj.mean(axis=0), rtol=1e-12)
    for k in range(3):
        se = traj[:, k].std() / math.sqrt(effective_sample_size(traj[:, k]))
        assert abs(summary["means"][k]) < 4 * se
    assert summary["seed"] == 2024 and len(summary["config_hash"]) == 64


def test_sample_summary_rates(tmp_path):
    cfg = write(tmp_path, {"sampler": "lazy:metropolis", "seed": 1, "steps": 4000,
                           "body": {"type": "box", "lower": [0, 0], "upper": [1, 1]},
                           "density": {"type": "gaussian", "sigma": 0.3, "mean": [0.5, 0.5]},
                           "proposal": {"type": "ball-walk", "radius": 0.3}})
    assert main(["sample", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert abs(summary["hold_rate"] - 0.5) < 4 * math.sqrt(0.25 / 4000)
    assert 0 < summary["acceptance_rate"] < 0.5


def spectrum(tmp_path, name):
    assert main(["spectrum", "--config", str(CONFIGS / name), "--out", str(tmp_path), "--emit-matrix"]) == 0
    return json.loads((tmp_path / "report.json").read_text())


def test_spectrum_examples(tmp_path):
    np.testing.assert_allclose(spectrum(tmp_path, "gibbs_2x2.json")["eigenvalues"], [1, 0.5, 0.5, 0], atol=1e-12)
    two = spectrum(tmp_path, "slice_two_cell.json")
    np.testing.assert_allclose(two["eigenvalues"], [1, 0.25], atol=1e-12)
    assert two["positive"] and two["seed"] == 7
    matrix = np.loadtxt(tmp_path / "matrix.csv", delimiter=",", comments="#")
    np.testing.assert_array_equal(matrix, [[0.5, 0.5], [0.25, 0.75]])
    swap = spectrum(tmp_path, "metropolis_swap.json")
    assert swap["positive"] is False
    np.testing.assert_allclose(swap["eigenvalues"], [1, -1], atol=1e-12)


def test_spectrum_notes_lattice_directions(tmp_path):
    rep = spectrum(tmp_path, "hit_and_run_grid.json")
    assert rep["directions"] == "axes+diagonals" and "lattice" in rep["note"]
    assert rep["lambda_min"] >= -1e-10


@pytest.mark.parametrize("name", ["gibbs_2x2.json", "slice_two_cell.json", "hit_and_run_grid.json",
                                  "metropolis_grid.json"])
def test_verify_builtin_scenarios(tmp_path, name):
    assert main(["verify", "--config", str(CONFIGS / name), "--out", str(tmp_path)]) == 0
    result = json.loads((tmp_path / "verify.json").read_text())
    assert result["passed"]
    for check in result["checks"]:
        if not check.get("skipped"):
            assert check["residual"] <= 1e-12, check
    names = {c["name"] for c in result["checks"]}
    if name == "hit_and_run_grid.json":
        assert "factorization.product" in names
    if name == "metropolis_grid.json":
        assert {"slice_equals_metropolis", "level_decomposition"} <= names


def test_verify_perturbation_fails(tmp_path):
    payload = json.loads((CONFIGS / "slice_two_cell.json").read_text())
    cfg = write(tmp_path, {**payload, "perturb": True})
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    checks = {c["name"]: c for c in json.loads((tmp_path / "verify.json").read_text())["checks"]}
    assert not checks["detailed_balance"]["passed"]


def test_jobs_runs_every_config(tmp_path):
    names = ["gibbs_2x2.json", "slice_two_cell.json"]
    argv = ["spectrum", "--jobs", "2", "--out", str(tmp_path)]
    for n in names:
        argv += ["--config", str(CONFIGS / n)]
    assert main(argv) == 0
    for n in names:
        assert (tmp_path / Path(n).stem / "report.json").exists()


@pytest.mark.parametrize("payload,line,message", [
    ({"sampler": "gibbs", "grid": [2, 2]}, None, "seed is required"),
    ({"seed": 1, "sampler": "langevin"}, 3, "unknown sampler"),
    ({"seed": -4, "sampler": "gibbs"}, 2, "seed must be"),
    ({"seed": 1, "sampler": "metropolis", "space": {"rho": [1, 2]}}, 3, "needs a proposal"),
    ({"seed": 1, "sampler": "slice", "proposal": {"type": "swap"}}, 4, "takes no proposal"),
    ({"seed": 1, "sampler": "gibbs", "colour": "red"}, 4, "unknown key"),
    ({"seed": 1, "sampler": "gibbs", "steps": 2.5}, 4, "steps must be"),
])
def test_config_errors_name_the_line(tmp_path, payload, line, message):
    cfg = write(tmp_path, payload)
    with pytest.raises(ConfigError, match=message) as err:
        load_config(cfg)
    assert err.value.line == line
    if line:
        assert str(err.value).startswith(f"{cfg}:{line}: ")


def test_invalid_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "seed": 1,\n  "sampler": gibbs\n}')
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert err.value.line == 3


def test_config_errors_exit_with_code_2(tmp_path, capsys):
    cfg = write(tmp_path, {"seed": 1, "sampler": "gibbs"})
    assert main(["spectrum", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "need a grid" in capsys.readouterr().err


def test_config_hash_is_canonical():
    a = parse_config({"seed": 1, "sampler": "gibbs", "grid": [2, 2]})
    b = parse_config({"grid": [2, 2], "sampler": "gibbs", "seed": 1})
    assert a.config_hash == b.config_hash
    assert a.config_hash != parse_config({"seed": 2, "sampler": "gibbs", "grid": [2, 2]}).config_hash


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "chordwalk", "spectrum", "--config",
                           str(CONFIGS / "slice_two_cell.json"), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads((tmp_path / "report.json").read_text())["positive"]
    if shutil.which("chordwalk"):
        proc = subprocess.run(["chordwalk", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "spectrum" in proc.stdout
