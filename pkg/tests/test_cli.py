import json
import subprocess
import sys

import numpy as np
import pytest

from liouville.cli import main
from liouville.config import ConfigError, RunConfig, parse_real
from liouville.io import read_field, write_field
from liouville.mesh import generate

SHOWCASE = ["--cone", "0.5,0.5:1.2"]


def run(argv, tmp_path, name="out"):
    out = tmp_path / name
    code = main(list(argv) + ["--out", str(out)])
    return code, out


def load(path):
    return json.loads(path.read_text())


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


# ---------------------------------------------------------------- config


def test_parse_real_forms():
    assert parse_real("4.8pi") == pytest.approx(4.8 * np.pi)
    assert parse_real("4.8*pi") == pytest.approx(4.8 * np.pi)
    assert parse_real("pi") == pytest.approx(np.pi)
    assert parse_real("-0.5pi") == pytest.approx(-0.5 * np.pi)
    assert parse_real("4pi-0.1") == pytest.approx(4 * np.pi - 0.1)
    assert parse_real("2pi + 1") == pytest.approx(2 * np.pi + 1)
    assert parse_real("1e-3") == 1e-3
    assert parse_real(3) == 3.0
    for bad in ("four", True, None, "pi pi"):
        with pytest.raises(ConfigError):
            parse_real(bad)


def test_config_validation_names_keys():
    with pytest.raises(ConfigError) as e:
        RunConfig.from_dict({"cones": [{"vertex": 3, "alpha": -1.5}]})
    assert e.value.key == "cones.alpha"
    with pytest.raises(ConfigError) as e:
        RunConfig.from_dict({"bogus": 1})
    assert e.value.key == "bogus"
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"strategy": "maxmin"})
    cfg = RunConfig.from_dict({"lambda_over_pi": 4.8, "lambda_path": "2pi:3pi"})
    assert cfg.lam == pytest.approx(4.8 * np.pi)
    assert cfg.lambda_path == pytest.approx([2 * np.pi, 3 * np.pi])


def test_config_round_trip():
    cfg = RunConfig.from_dict({"cones": [{"at": [0.5, 0.5], "alpha": "1.2"}], "lambda": "4.8pi", "seed": 7})
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"shape": "disk", "refinement": 2, "lambda": "2pi"}))
    code, out = run(["classify", "--config", str(cfg), "--shape", "cylinder"], tmp_path)
    assert code == 0
    man = load(out / "manifest.json")
    assert man["config"]["shape"] == "cylinder"
    assert man["config"]["refinement"] == 2
    assert man["config"]["lam"] == pytest.approx(2 * np.pi)


# ---------------------------------------------------------------- commands


def test_classify_showcase(tmp_path):
    code, out = run(["classify"] + SHOWCASE, tmp_path)
    assert code == 0
    rep = load(out / "classify.json")
    assert rep["classification"] == "supercritical"
    assert rep["geometric_lambda_over_pi"] == pytest.approx(4.8)
    assert rep["applicability"]["applicable"] is True


def test_classify_disk_critical(tmp_path):
    code, out = run(["classify", "--shape", "disk", "--refinement", "2"], tmp_path)
    assert code == 0
    assert load(out / "classify.json")["classification"] == "critical"


def test_invalid_order_rejected(tmp_path, capsys):
    code, out = run(["classify", "--cone", "0.5,0.5:-1.5"], tmp_path)
    assert code == 1
    err = last_error(capsys)
    assert err["error"] == "config" and err["key"] == "cones.alpha"


def test_spectrum_command(tmp_path):
    code, out = run(["spectrum", "--cone", "0.5,0.5:-0.5", "--lam-max", "12pi"], tmp_path)
    assert code == 0
    vals = [e["value_over_pi"] for e in load(out / "spectrum.json")]
    assert vals == [0.0, 4.0, 8.0, 12.0]


def test_green_on_disk(tmp_path):
    code, out = run(["green", "--shape", "disk", "--refinement", "3", "--pole", "0,0"], tmp_path)
    assert code == 0
    G = read_field(out / "green.field")
    side = load(out / "green.json")
    m = generate("disk", 3)
    assert len(G) == m.n_vertices
    assert side["pole"] == m.nearest_vertex((0.0, 0.0))
    assert side["singular_coefficient"] == pytest.approx(-1 / (2 * np.pi))
    assert abs(side["mean"]) < 1e-10


def test_green_needs_pole(tmp_path, capsys):
    code, _ = run(["green", "--shape", "disk", "--refinement", "2"], tmp_path)
    assert code == 1
    assert last_error(capsys)["error"] == "config"


def test_solve_min(tmp_path):
    code, out = run(["solve", "--cone", "0.5,0.5:-0.3"], tmp_path)
    assert code == 0
    rep = load(out / "report.json")
    assert rep["converged"] and rep["residual"] <= 1e-8
    v = read_field(out / "solution.field")
    assert len(v) == len(read_field(out / "solution_u.field"))


def test_solve_minmax_showcase(tmp_path):
    code, out = run(["solve", "--lambda", "4.8pi", "--strategy", "minmax", "--grid", "4:10,100"] + SHOWCASE, tmp_path)
    assert code == 0
    rep = load(out / "report.json")
    assert rep["solutions"]
    assert all(s["residual"] <= 1e-6 for s in rep["solutions"])
    man = load(out / "manifest.json")
    assert man["successful_starts"]
    assert (out / "solution_0.field").exists()


def test_minmax_guard_band_is_usage_error(tmp_path, capsys):
    code, _ = run(["solve", "--lambda", "4pi", "--strategy", "minmax"] + SHOWCASE, tmp_path)
    assert code == 1
    err = last_error(capsys)
    assert err["error"] == "precondition" and "4.0" in err["message"]


def test_bubble_command(tmp_path):
    code, out = run(["bubble", "--lambda", "6pi", "--k", "1", "--Lambdas", "1e2,1e3,1e4"], tmp_path)
    assert code == 0
    rep = load(out / "bubble.json")
    for key in ("dirichlet", "log_mass", "J"):
        assert 0.85 <= rep["slope_ratios"][key] <= 1.15


def test_continue_and_check(tmp_path):
    code, out = run(["continue", "--lambda-path", "2pi:2.5pi"], tmp_path)
    assert code == 0
    cont = load(out / "continuation.json")
    assert cont["status"] == "completed"
    code, chk = run(["check", "--lambda", "2.5pi", "--field", str(out / "solution.field")], tmp_path, "chk")
    assert code == 0
    rep = load(chk / "check.json")
    assert rep["passes"] and rep["gauss_bonnet"]["relative_error"] < 1e-12


def test_check_failure_exit_code(tmp_path, capsys):
    field = tmp_path / "bad.field"
    n = generate("cylinder", 3).n_vertices
    write_field(field, np.cos(np.arange(n)))
    code, out = run(["check", "--lambda", "2pi", "--field", str(field)], tmp_path)
    assert code == 2
    assert last_error(capsys)["error"] == "solver"
    assert load(out / "manifest.json")["exit_code"] == 2


def test_blowup_command(tmp_path):
    code, out = run(["blowup", "--refinement", "4", "--lambda-path", "2pi:4pi-0.1"], tmp_path)
    assert code == 0
    mass = load(out / "mass_report.json")
    assert mass["status"] == "blow_up"
    assert len(mass["peaks"]) == 1
    assert mass["peaks"][0]["class"] == "boundary"


# ---------------------------------------------------------------- failures are JSON


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "--config", "/nonexistent/run.json"],
        ["solve", "--mesh", "/nonexistent/mesh.off"],
        ["solve", "--cone", "nonsense"],
        ["solve", "--cone", "x:1"],
        ["solve", "--lambda", "lots"],
        ["solve", "--grid", "a:b"],
    ],
)
def test_usage_errors_are_json(argv, tmp_path, capsys):
    code, _ = run(argv, tmp_path)
    assert code == 1
    err = last_error(capsys)
    assert set(err) >= {"error", "message"}


def test_unknown_command_is_json(capsys):
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code == 1
    assert last_error(capsys)["error"] == "usage"


def test_module_entry_point(tmp_path):
    out = tmp_path / "cli"
    proc = subprocess.run(
        [sys.executable, "-m", "liouville", "classify", "--shape", "disk", "--refinement", "2", "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["classification"] == "critical"


# ---------------------------------------------------------------- reproducibility


COMMANDS = [
    ["classify"] + SHOWCASE,
    ["spectrum"] + SHOWCASE + ["--lam-max", "20pi"],
    ["green", "--shape", "disk", "--refinement", "3", "--pole", "0,0"],
    ["solve", "--cone", "0.5,0.5:-0.3"],
    ["solve", "--lambda", "4.8pi", "--strategy", "minmax", "--grid", "2:10"] + SHOWCASE,
    ["continue", "--lambda-path", "2pi:2.5pi"],
    ["bubble", "--lambda", "6pi", "--Lambdas", "1e2,1e3,1e4"],
    ["blowup", "--refinement", "2", "--lambda-path", "3.5pi:3.7pi"],
]


def snapshot(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "timings.json"}


@pytest.mark.parametrize("argv", COMMANDS, ids=lambda a: a[0])
def test_reruns_are_byte_identical(argv, tmp_path):
    code, out = run(argv + ["--seed", "3"], tmp_path)
    first = snapshot(out)
    code2, _ = run(argv + ["--seed", "3"], tmp_path)
    assert code == code2
    assert snapshot(out) == first
    assert any(name.endswith(".json") and name != "manifest.json" for name in first)
