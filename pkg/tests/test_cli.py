import json
import subprocess
import sys

import pytest

from akflow.cli import main
from akflow.identities import REGISTRY_VERSION


def run_cli(tmp_path, *argv, name="report.json"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_verify_flat(tmp_path):
    code, rep = run_cli(tmp_path, "verify", "--example", "flat", "--grid", "8")
    assert code == 0
    assert all(r["max_abs"] <= 1e-12 for r in rep["results"] if r["status"] != "skipped")
    assert rep["registry_version"] == REGISTRY_VERSION
    assert rep["grid"]["resolutions"] == [8, 1, 1, 1]
    assert len(rep["config_hash"]) == 64 and rep["backend"] == "fd"


def test_verify_exact_family(tmp_path):
    code, rep = run_cli(tmp_path, "verify", "--example", "family", "--backend", "exact")
    assert code == 0
    assert any(r["status"] == "skipped" for r in rep["results"])


def test_verify_failure_exit_code(tmp_path):
    # a 1e-15 relative budget sits below the fd4 truncation error
    code, rep = run_cli(tmp_path, "verify", "--example", "family", "--ids", "SCAL-ID",
                        "--tol", "1e-15")
    assert code == 1 and not rep["passed"]


def test_reports_are_byte_identical(tmp_path):
    args = ["verify", "--example", "family", "--grid", "32"]
    main([*args, "--out", str(tmp_path / "a.json")])
    main([*args, "--out", str(tmp_path / "b.json")])
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_converge_scal_id(tmp_path):
    code, rep = run_cli(tmp_path, "converge", "--example", "family", "--eps", "0.1",
                        "--ids", "SCAL-ID", "--res", "32,64,128")
    assert code == 0
    r = rep["results"][0]
    assert r["status"] == "converging" and r["observed_order"] >= 3.0


def test_flow_with_check_writes_csv(tmp_path):
    code, rep = run_cli(tmp_path, "flow", "--example", "family", "--eps", "0.05", "--dt", "1e-3",
                        "--steps", "4", "--check", "tau_norm", "--check-resolution", "64")
    assert code == 0
    chk = rep["checks"][0]
    assert chk["which"] == "tau_norm" and chk["dt_refinement_factor"] >= 3.5
    text = (tmp_path / "report.csv").read_bytes().decode("utf-8")
    lines = text.split("\n")
    assert lines[0] == "t,rho_mean,tau2_max,tau2_l2,j2_drift,compat_drift,scalR_mean"
    assert "\r" not in text and len([x for x in lines if x]) == 6  # header + 5 states


def test_flow_rejection_exit_code(tmp_path):
    code, rep = run_cli(tmp_path, "flow", "--example", "family", "--eps", "0.05", "--steps", "3",
                        "--drift-tol", "1e-14")
    assert code == 1 and "rejected" in rep["trajectory"]


def test_info(tmp_path):
    code, rep = run_cli(tmp_path, "info", "--example", "family", "--grid", "32")
    assert code == 0
    assert rep["tau_norm2"]["max"] > 0 and rep["static_lambda0"]["passed"] is False
    assert set(rep["chern_scalar"]) == {"min", "max", "mean"}


def test_yaml_config_and_flag_override(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("family:\n  name: flat\ngrid:\n  resolutions: [8]\n")
    code, rep = run_cli(tmp_path, "verify", "--config", str(cfg))
    assert code == 0 and rep["grid"]["resolutions"] == [8, 1, 1, 1]
    code, rep = run_cli(tmp_path, "verify", "--config", str(cfg), "--grid", "16")
    assert rep["grid"]["resolutions"] == [16, 1, 1, 1]


def test_json_config(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"family": {"name": "flat"}, "grid": {"resolutions": [8]},
                               "identities": {"ids": ["KI", "SCAL-ID"]}}))
    code, rep = run_cli(tmp_path, "verify", "--config", str(cfg))
    assert code == 0 and [r["id"] for r in rep["results"]] == ["KI", "SCAL-ID"]


@pytest.mark.parametrize("text, needle", [
    ("grid:\n  dim: 4\n  resolutoins: [8]\n", "grid.resolutoins"),
    ("grid: [1, 2\n", "line 2"),
    ("family:\n  eps: big\n", "family.eps"),
    ("flow:\n  checks: [bogus]\n", "flow.checks"),
])
def test_bad_config_exit_two(tmp_path, capsys, text, needle):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(text)
    assert main(["verify", "--config", str(cfg)]) == 2
    assert needle in capsys.readouterr().err


def test_malformed_json_reports_line(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{\n  "grid": {"dim": 4,}\n}')
    assert main(["verify", "--config", str(cfg)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_bad_flags_exit_two(capsys):
    assert main(["verify", "--ids", "NOPE"]) == 2
    assert main(["verify", "--grid", "8,8"]) == 2
    with pytest.raises(SystemExit) as e:
        main(["verify", "--backend", "spectral"])
    assert e.value.code == 2


def test_thread_cap(tmp_path, monkeypatch):
    monkeypatch.setenv("AKFLOW_THREADS", "3")
    code, rep = run_cli(tmp_path, "verify", "--example", "family", "--backend", "exact")
    monkeypatch.delenv("AKFLOW_THREADS")
    code2, rep2 = run_cli(tmp_path, "verify", "--example", "family", "--backend", "exact",
                          name="serial.json")
    assert code == code2 == 0 and rep == rep2
    monkeypatch.setenv("AKFLOW_THREADS", "zero")
    assert main(["verify"]) == 2


def test_module_entry_point():
    p = subprocess.run([sys.executable, "-m", "akflow", "verify", "--example", "flat", "--grid",
                        "8", "--ids", "J-SQUARED"], capture_output=True, text=True)
    assert p.returncode == 0
    assert json.loads(p.stdout)["passed"] is True


def test_yaml_bare_off(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("family: {name: flat}\ngrid: {resolutions: [16]}\n"
                   "flow: {retraction: off, steps: 2}\n")
    code, rep = run_cli(tmp_path, "flow", "--config", str(cfg))
    assert code == 0 and rep["config"]["flow"]["retraction"] == "off"
