import csv
import json
import os

import pytest
import yaml

from nullrefill import cli
from nullrefill.engine import FIELDS
from nullrefill.scenario import resolve_path


@pytest.fixture
def short_yaml(tmp_path):
    def make(name="short", **overrides):
        doc = yaml.safe_load(resolve_path("paper_sim_nullrefill").read_text())
        doc.update(name=name, duration=1.0, **overrides)
        p = tmp_path / f"{name}.yaml"
        p.write_text(yaml.safe_dump(doc))
        return p
    return make


def test_header_order():
    header = cli.csv_header(6, 3, 3)
    assert header[:7] == ["t", "q_0", "q_1", "q_2", "q_3", "q_4", "q_5"]
    assert header[13:16] == ["x1_0", "x1_1", "x1_2"]
    assert header[19:28] == ["v2_0", "v2_1", "v2_2", "F1_0", "F1_1", "F1_2",
                             "Fnull_0", "Fnull_1", "Fnull_2"]
    assert header[28:] == ["M_trace", "D_trace", "psi", "d_N", "T_tank", "phi", "gamma",
                           "P_D", "P_N", "P_M", "P_psi", "S", "E_in", "flags"]
    assert len(header) == 1 + 6 * 2 + 3 * 5 + len(FIELDS) - 8


def test_run_writes_outputs(short_yaml, tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--scenario", str(short_yaml()), "--out", str(out)]) == 0
    with open(out / "short.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == cli.csv_header(6, 3, 3)
    assert len(rows) == 1 + 501
    # 17 significant digits round-trip exactly
    assert float(rows[2][0]) == 0.002
    summary = json.loads((out / "short_summary.json").read_text())
    assert summary["passivity_pass"] and summary["csv_schema"] == cli.CSV_SCHEMA
    assert (out / "plot_runs.py").exists()
    assert oct((out / "short.csv").stat().st_mode & 0o777) == "0o644"


def test_rerun_is_byte_identical_and_atomic(short_yaml, tmp_path):
    out = tmp_path / "out"
    path = short_yaml()
    cli.main(["run", "--scenario", str(path), "--out", str(out)])
    first = (out / "short.csv").read_bytes()
    cli.main(["run", "--scenario", str(path), "--out", str(out)])
    assert (out / "short.csv").read_bytes() == first
    assert not [p for p in os.listdir(out) if p.endswith(".tmp")]


def test_overrides(short_yaml, tmp_path):
    out = tmp_path / "out"
    cli.main(["run", "--scenario", str(short_yaml()), "--out", str(out),
              "--duration", "0.5", "--dt", "0.001"])
    summary = json.loads((out / "short_summary.json").read_text())
    assert summary["steps"] == 500 and summary["dt"] == 0.001


def test_env_output_dir(short_yaml, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    assert cli.main(["run", "--scenario", str(short_yaml())]) == 0
    assert (tmp_path / "envout" / "short.csv").exists()


def test_missing_file_exit_code(tmp_path, capsys):
    assert cli.main(["run", "--scenario", str(tmp_path / "missing.file")]) == cli.EXIT_CONFIG
    assert "not found" in capsys.readouterr().err


def test_parse_error_exit_code(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("force: [1,\n")
    assert cli.main(["validate", "--scenario", str(p)]) == cli.EXIT_CONFIG


def test_monitor_failure_exit_code(tmp_path):
    assert cli.main(["run", "--scenario", "micro_gate_disabled", "--out", str(tmp_path)]) == cli.EXIT_MONITOR


def test_singular_exit_code(tmp_path):
    p = tmp_path / "planar.yaml"
    p.write_text(yaml.safe_dump({
        "name": "planar", "chain": {"dh": [[1.0, 0.0, 0.0, 0.0]] * 4},
        "q0": [0.1, 0.2, 0.3, 0.4], "null_space": {"gains": [0.5]}, "duration": 1.0,
    }))
    assert cli.main(["run", "--scenario", str(p), "--out", str(tmp_path)]) == cli.EXIT_SINGULAR


def test_validate_lists_defaults(tmp_path, capsys):
    p = tmp_path / "minimal.yaml"
    p.write_text("name: minimal\n")
    assert cli.main(["validate", "--scenario", str(p)]) == 0
    out = capsys.readouterr().out
    assert "valid" in out and "tank.T_bar" in out


def test_compare_outputs(short_yaml, tmp_path):
    out = tmp_path / "out"
    code = cli.main(["compare", "--scenario", str(short_yaml("cmp")), "--out", str(out)])
    assert code == 0
    for stem in ("cmp__null_refill", "cmp__damping_injection"):
        assert (out / f"{stem}.csv").exists()
    report = json.loads((out / "cmp__compare.json").read_text())
    assert set(report["max_deviation"]) == {"null_refill", "damping_injection"}
    header = (out / "cmp__compare.csv").read_text().splitlines()[0]
    assert header.startswith("t,ideal,null_refill,damping_injection")


def test_batch(short_yaml, tmp_path, capsys):
    out = tmp_path / "out"
    a, b = short_yaml("a"), short_yaml("b")
    assert cli.main(["batch", str(a), str(b), "--out", str(out), "--workers", "2"]) == 0
    assert (out / "a.csv").exists() and (out / "b.csv").exists()
    assert cli.main(["batch", str(a), str(tmp_path / "nope.yaml"), "--out", str(out),
                     "--workers", "1"]) == cli.EXIT_CONFIG
