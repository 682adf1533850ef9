import json
import subprocess
import sys

import pytest

from contactproc.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, run
from contactproc.config import ConfigError, RunConfig, from_dict, load_config, parse_grid, parse_kernel
from contactproc.lattice import InfectionKernel, Torus


def test_exact_r_two_site(capsys):
    assert run(["exact-r", "--group", "torus:2x1", "--kernel", "nn:1", "--delta", "1"]) == EXIT_OK
    assert "r=-0.5857864376" in capsys.readouterr().out


def test_exact_r_writes_json_and_manifest(tmp_path):
    out = tmp_path / "o"
    code = run(["exact-r", "--group", "torus:3x1", "--delta-grid", "0:2:0.1", "--out", str(out)])
    assert code == EXIT_OK
    records = json.loads((out / "exact_r.json").read_text())
    assert len(records) == 21
    rs = [r["r"] for r in records]
    assert all(b <= a + 1e-9 for a, b in zip(rs, rs[1:]))
    manifest = json.loads((out / "exact_r.json.manifest.json").read_text())
    assert manifest["config"]["group"] == "torus:3x1"
    assert {"python", "numpy", "numba"} <= set(manifest["versions"])


def test_missing_seed_is_usage_error(capsys):
    assert run(["mc-survival", "--group", "z:1", "--delta", "1"]) == EXIT_USAGE
    assert "seed" in capsys.readouterr().err


def test_bad_flag_and_unknown_command():
    assert run(["exact-r", "--bogus", "1"]) == EXIT_USAGE
    assert run(["frobnicate"]) == EXIT_USAGE
    assert run(["exact-r", "--group", "z:1", "--delta", "1"]) == EXIT_USAGE


def test_help_exits_ok(capsys):
    assert run(["--help"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "find-critical" in text and "CSV columns" in text


def test_config_file_round_trip(tmp_path):
    cfg = from_dict({"command": "exact-r", "group": "torus:2x1", "delta": 1, "kernel": "nn:1"})
    path = tmp_path / "c.json"
    path.write_text(cfg.canonical())
    again = load_config(path)
    assert again == cfg
    assert again.canonical() == cfg.canonical()
    assert run(["exact-r", "--config", str(path)]) == EXIT_OK


def test_config_unknown_field_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"command": "exact-r", "delta": 1.0, "colour": "red"}))
    with pytest.raises(ConfigError, match="colour"):
        load_config(path)
    assert run(["exact-r", "--config", str(path)]) == EXIT_USAGE


def test_config_syntax_error_reports_position(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"command": "exact-r",\n "delta": }')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(path)


def test_config_type_errors():
    with pytest.raises(ConfigError):
        from_dict({"command": "exact-r", "replicas": "many"})
    with pytest.raises(ConfigError):
        from_dict({"command": "nope"})
    with pytest.raises(ConfigError):
        from_dict({"delta": 1.0})
    assert RunConfig("exact-r").tol("residual", 1e-9) == 1e-9


def test_parse_grid():
    g = parse_grid("0:2:0.1")
    assert len(g) == 21 and g[0] == 0.0 and g[-1] == 2.0 and g[3] == 0.3
    with pytest.raises(ConfigError):
        parse_grid("0:1")
    with pytest.raises(ConfigError):
        parse_grid("1:0:0.1")


def test_parse_kernel_forms():
    t = Torus(4, 1)
    assert parse_kernel(t, "nn:2") == InfectionKernel.nearest_neighbor(t, 2.0)
    assert parse_kernel(t, "zero").is_zero
    assert parse_kernel(t, "[[1, 2], [-1, 1]]") == InfectionKernel.from_pairs(t, [[1, 2], [-1, 1]])
    assert parse_kernel(t, [[1, 2]]).total == 2.0
    for bad in ("nn:x", "ring", "[[1,"):
        with pytest.raises(ConfigError):
            parse_kernel(t, bad)


def test_tolerance_override_can_fail_a_check(capsys):
    args = ["exact-duality", "--group", "torus:3x1", "--kernel", "[[1, 2], [-1, 1]]",
            "--delta", "1", "--cases", "5", "--seed", "1"]
    assert run(args) == EXIT_OK
    assert run(args + ["--tol", "duality=-1"]) == EXIT_NUMERIC
    assert run(args + ["--tol", "duality=abc"]) == EXIT_USAGE


@pytest.mark.parametrize("argv,files", [
    (["eigenmeasure", "--group", "torus:3x1", "--delta", "1"], ["eigenmeasure.json"]),
    (["submult", "--group", "torus:3x1", "--delta", "1", "--cases", "5", "--seed", "2"], ["submult.csv"]),
    (["bound-table"], ["bound_table.csv"]),
    (["submartingale-fuzz", "--cases", "50", "--seed", "3"], ["fuzz.csv"]),
    (["drift-report", "--group", "torus:3x1", "--delta", "1", "--eps", "0.5"], ["drift.json"]),
    (["mc-growth", "--group", "torus:4x1", "--delta", "1", "--horizon", "5", "--replicas", "200",
      "--seed", "1"], ["growth.csv", "growth_fit.json"]),
    (["mc-survival", "--group", "z:1", "--delta-grid", "0.5:1:0.5", "--horizon", "5",
      "--replicas", "200", "--seed", "1"], ["survival.csv"]),
    (["find-critical", "--group", "z:1", "--delta-lo", "0.2", "--delta-hi", "3", "--horizon", "10",
      "--replicas", "200", "--iterations", "3", "--seed", "1"], ["critical_path.csv", "critical.json"]),
    (["verify-bound", "--group", "z:1", "--delta-c", "0.6", "--gammas", "0.9", "--horizon", "5",
      "--replicas", "200", "--seed", "1"], ["bound_check.csv"]),
])
def test_every_command_writes_outputs(tmp_path, argv, files):
    out = tmp_path / "o"
    assert run(argv + ["--out", str(out)]) == EXIT_OK
    for name in files:
        assert (out / name).exists()
        assert (out / (name + ".manifest.json")).exists()


def test_bound_table_shape(tmp_path):
    run(["bound-table", "--out", str(tmp_path)])
    lines = (tmp_path / "bound_table.csv").read_text().splitlines()
    assert lines[0] == "gamma,eps,eps1,eps2,phi_gamma,taylor_approx,diff"
    assert len(lines) == 100


def test_csv_byte_identical_across_threads(tmp_path):
    base = ["mc-survival", "--group", "z:1", "--delta-grid", "0.6:0.8:0.2", "--horizon", "10",
            "--replicas", "300", "--seed", "9"]
    run(base + ["--threads", "1", "--out", str(tmp_path / "a")])
    run(base + ["--threads", "3", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "survival.csv").read_bytes() == (tmp_path / "b" / "survival.csv").read_bytes()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "contactproc", "exact-r", "--group", "torus:1x1",
                           "--kernel", "zero", "--delta", "0.5"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "r=-0.5000000000" in proc.stdout
