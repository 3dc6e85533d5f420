import csv
import hashlib
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import pytest

from vortex_phase_lab import __version__
from vortex_phase_lab.cli import apply_thread_cap, main
from vortex_phase_lab.config import ConfigError, build_config, config_hash, parse_config
from vortex_phase_lab.io import SCHEMA_VERSION, format_value, read_csv


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def test_minimal_classify_config_valid(tmp_path):
    cfg = parse_config(write(tmp_path, {"task": "classify", "domain": {"areas": [1, 0.9, 0.5]}}))
    assert cfg.task == "classify"
    assert cfg.domain["areas"] == [1.0, 0.9, 0.5]
    assert len(cfg.config_hash) == 64


def test_unsorted_areas_sorted_with_warning():
    with pytest.warns(UserWarning):
        cfg = build_config({"task": "classify", "domain": {"areas": [0.5, 1, 0.9]}})
    assert cfg.domain["areas"] == [1.0, 0.9, 0.5]


def test_negative_area_rejected():
    with pytest.raises(ConfigError) as info:
        build_config({"task": "classify", "domain": {"areas": [1, -0.5]}})
    assert info.value.field == "domain.areas"


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        build_config({"task": "classify", "domain": {"areas": [1]}, "colour": "red"})
    with pytest.raises(ConfigError) as info:
        build_config({"task": "branch", "domain": {"areas": [1]}, "params": {"muu": [0.1]}})
    assert info.value.field == "params.muu"


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n"task": "classify",\n"domain": {areas: [1]}\n}')
    with pytest.raises(ConfigError) as info:
        parse_config(p)
    assert info.value.line == 3


def test_task_mismatch_rejected():
    with pytest.raises(ConfigError):
        build_config({"task": "classify", "domain": {"areas": [1]}}, task="envelope")


def test_config_hash_ignores_output_dir():
    a = build_config({"task": "classify", "domain": {"areas": [1, 0.5]}}, out="x")
    b = build_config({"task": "classify", "domain": {"areas": [1, 0.5]}}, out="y")
    assert a.config_hash == b.config_hash == config_hash(a.normalized())


def test_format_value_round_trips():
    for v in (math.pi, 1 / 3, 1e-300, -2.5e17, 0.1):
        s = format_value(v)
        assert float(s) == v
    assert format_value(0.1) == "0.10000000000000001"


def test_thread_cap(monkeypatch):
    env = {"VPL_THREADS": "2"}
    assert apply_thread_cap(env) == 2
    assert env["OMP_NUM_THREADS"] == "2" and env["OPENBLAS_NUM_THREADS"] == "2"
    with pytest.raises(ConfigError):
        apply_thread_cap({"VPL_THREADS": "0"})
    assert apply_thread_cap({}) is None


def test_classify_run(tmp_path):
    cfg = write(tmp_path, {"task": "classify", "domain": {"areas": [1, 0.9, 0.5]}})
    assert main(["classify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    data = json.loads((tmp_path / "o" / "classify.json").read_text())
    assert data["kind"] == "second"


def test_empty_mu_grid_exit_1(tmp_path, capsys):
    cfg = write(tmp_path, {"task": "branch", "domain": {"areas": [1]}, "params": {"mu": []}})
    assert main(["branch", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["status"] == "error" and err["field"] == "params.mu"


def test_domain_error_exit_1(tmp_path, capsys):
    cfg = write(tmp_path, {"task": "branch", "domain": {"areas": [1]}, "params": {"mu": [1.5]}})
    assert main(["branch", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["status"] == "error"


def test_branch_csv_header_digits_and_sidecar(tmp_path):
    cfg = write(tmp_path, {"task": "branch", "domain": {"areas": [1, 0.6, 0.2]}, "params": {"mu": [0.1, 0.3, 0.5]}})
    out = tmp_path / "o"
    assert main(["branch", "--config", str(cfg), "--out", str(out)]) == 0
    with open(out / "branch.csv") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    assert {"mu", "E", "S", "beta"} <= set(header)
    assert len(rows) == 4
    j = header.index("E")
    for r in rows[1:]:
        digits = r[j].lstrip("-").split("e")[0].replace(".", "").lstrip("0")
        assert len(digits) <= 17
        assert float(r[j]) == float(format_value(float(r[j])))
    meta = json.loads((out / "branch.meta.json").read_text())
    assert meta["tool_version"] == __version__
    assert meta["schema_version"] == SCHEMA_VERSION
    assert meta["config_hash"] == parse_config(cfg).config_hash
    cols, body = read_csv(out / "branch.csv")
    assert cols == header and len(body) == 3


def test_envelope_run_concave(tmp_path):
    cfg = write(tmp_path, {"task": "envelope", "domain": {"areas": [1, 0.6, 0.2]}, "params": {"n": 60}})
    assert main(["envelope", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    cols, body = read_csv(tmp_path / "envelope.csv")
    E = [float(r[cols.index("E")]) for r in body]
    S = [float(r[cols.index("S")]) for r in body]
    assert len(E) == 60
    slopes = [(S[k + 1] - S[k]) / (E[k + 1] - E[k]) for k in range(len(E) - 1)]
    upper = [s for e, s in zip(E[1:], slopes) if e > 1 / (16 * math.pi) * 1.01 / 1.8]
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(upper[:-1], upper[1:]))


def test_transition_exit_codes(tmp_path):
    found = write(tmp_path, {"task": "transition", "domain": {"areas": [1, 1 - 3e-5, 1 - 3e-5]}}, "t1.json")
    assert main(["transition", "--config", str(found), "--out", str(tmp_path / "a")]) == 0
    rep = json.loads((tmp_path / "a" / "transition.json").read_text())["report"]
    assert rep["found"] and rep["beta_minus"] < rep["beta_plus"]
    none = write(tmp_path, {"task": "transition", "domain": {"areas": [1, 0.6, 0.2]}}, "t2.json")
    assert main(["transition", "--config", str(none), "--out", str(tmp_path / "b")]) == 2
    assert not json.loads((tmp_path / "b" / "transition.json").read_text())["report"]["found"]


def _digest(folder: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.iterdir())}


def _run_cli(task, cfg, out, threads):
    env = dict(os.environ, VPL_THREADS=str(threads))
    code = "from vortex_phase_lab.cli import main; import sys; sys.exit(main(sys.argv[1:]))"
    return subprocess.run([sys.executable, "-c", code, task, "--config", str(cfg), "--out", str(out)],
                          env=env, capture_output=True, text=True).returncode


def test_deterministic_across_runs_and_threads(tmp_path):
    cfg = write(tmp_path, {"task": "envelope", "domain": {"areas": [1, 0.9, 0.5]}, "params": {"n": 50}})
    assert _run_cli("envelope", cfg, tmp_path / "r1", 1) == 0
    assert _run_cli("envelope", cfg, tmp_path / "r2", 1) == 0
    assert _run_cli("envelope", cfg, tmp_path / "r3", 4) == 0
    d1, d2, d3 = (_digest(tmp_path / f"r{k}") for k in (1, 2, 3))
    assert d1 == d2 == d3


def test_pde_transition_mode_without_window_exits_2(tmp_path):
    cfg = write(tmp_path, {"task": "pde",
                           "geometry": {"kind": "dumbbell", "areas": [1, 0.99997, 0.99997], "width": 0.2},
                           "params": {"mode": "transition", "h": 1 / 64}})
    assert main(["pde", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cols, body = read_csv(tmp_path / "dumbbell_transition.csv")
    assert cols[:4] == ["E", "S_left", "S_right", "dS"] and body == []
    meta = json.loads((tmp_path / "dumbbell_transition.meta.json").read_text())
    assert meta["found"] is False and "window" in meta["message"]


def test_pde_solve_and_dumbbell_modes(tmp_path):
    cfg = write(tmp_path, {"task": "pde", "geometry": {"kind": "disk"},
                           "params": {"h": 1 / 32, "mu": 0.3, "export_field": True}})
    assert main(["pde", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    cols, body = read_csv(tmp_path / "s" / "pde.csv")
    assert len(body) == 1 and float(body[0][cols.index("beta")]) == pytest.approx(-8 * math.pi * 0.3, rel=1e-2)
    assert (tmp_path / "s" / "pde_field.csv").exists()
    cfg = write(tmp_path, {"task": "pde", "geometry": {"kind": "dumbbell", "areas": [1, 0.9]},
                           "params": {"mode": "dumbbell", "h": 1 / 64, "widths": [0.2, 0.1]}}, "d.json")
    assert main(["pde", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    cols, body = read_csv(tmp_path / "d" / "dumbbell.csv")
    assert len(body) == 3 and body[0][0] == "nan"
