"""Command-line surface: exit codes (0 ok, 1 runtime error, 2 usage),
option parsing, config-file merging, and the simulate -> certify file flow.
"""

import shutil
import subprocess

import pytest

from cocolq import cli


def run(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_simulate_summary_line(capsys):
    code, out, err = run(
        ["simulate", "--scenario", "switching", "--steps", "5",
         "--noise", "zero"], capsys)
    assert code == 0
    assert err == ""
    assert out.startswith("simulate: scenario=switching alg=CocoLQ steps=5")
    assert "avg_cost=" in out and "infeasible=0" in out


def test_simulate_writes_csv(tmp_path, capsys):
    dest = tmp_path / "run.csv"
    code, out, _ = run(
        ["simulate", "--scenario", "switching", "--steps", "4",
         "--noise", "zero", "--out", str(dest)], capsys)
    assert code == 0
    header = dest.read_text().splitlines()[0]
    assert header == "t,x0,x1,u0,u1,w0,w1,stage_cost,status,alpha_used"
    assert f"out={dest}" in out


def test_simulate_certify_flow(tmp_path, capsys):
    log = tmp_path / "run.csv"
    cert = tmp_path / "cert.csv"
    code, _, _ = run(
        ["simulate", "--scenario", "switching", "--alpha", "0.4",
         "--steps", "25", "--noise", "trunc-gauss:0.01:3",
         "--out", str(log)], capsys)
    assert code == 0
    code, out, _ = run(
        ["certify", "--in", str(log), "--scenario", "switching",
         "--alpha", "0.4", "--out", str(cert)], capsys)
    assert code == 0
    assert out.startswith("certify: PASS steps=25")
    assert "iss_violations=0" in out
    assert cert.read_text().splitlines()[0] == \
        "t,norm_L,kappa_t,transition_norm,pass"


def test_sweep_prints_rows(tmp_path, capsys):
    dest = tmp_path / "sweep.csv"
    code, out, _ = run(
        ["sweep-alpha", "--scenario", "switching", "--alpha", "0.3,0.4",
         "--steps", "8", "--noise", "zero", "--out", str(dest)], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].startswith("alpha=0.3 avg_cost=")
    assert lines[1].startswith("alpha=0.4 avg_cost=")
    assert "normalized=" in lines[0]
    assert dest.exists()


def test_algorithm_selection(capsys):
    code, out, _ = run(
        ["simulate", "--scenario", "switching", "--alg", "naive-lti",
         "--steps", "3", "--noise", "zero"], capsys)
    assert code == 0
    assert "alg=NaiveLTI" in out
    code, out, _ = run(
        ["simulate", "--scenario", "rank-deficient-pair", "--alg",
         "coco-lq-predict", "--alpha", "0.3", "--horizon", "2",
         "--steps", "4", "--noise", "zero"], capsys)
    assert code == 0
    assert "alg=CocoLQPredict" in out and "infeasible=0" in out


# ---------------------------------------------------------------------------
# failure modes


def test_usage_errors_exit_2(capsys):
    for argv in (
        ["simulate", "--scenario", "nope"],
        ["simulate", "--scenario", "switching", "--alpha", "1.5"],
        ["simulate", "--scenario", "switching", "--alpha", "abc"],
        ["simulate", "--scenario", "switching", "--steps", "0"],
        ["simulate", "--scenario", "switching", "--noise", "bogus"],
        ["no-such-command"],
    ):
        with pytest.raises(SystemExit) as info:
            cli.main(argv)
        assert info.value.code == 2, argv
        capsys.readouterr()


def test_runtime_errors_exit_1(capsys):
    code, out, err = run(
        ["certify", "--in", "/nonexistent/run.csv", "--scenario",
         "switching"], capsys)
    assert code == 1
    assert out == ""
    assert err.startswith("error: ")

    # adaptive scenario cannot provide a prediction window
    code, _, err = run(
        ["simulate", "--scenario", "pendulum", "--alg", "coco-lq-predict",
         "--steps", "3", "--noise", "zero"], capsys)
    assert code == 1
    assert "InvalidInputError" in err

    code, _, err = run(["certify", "--scenario", "switching"], capsys)
    assert code == 1  # --in is required


# ---------------------------------------------------------------------------
# config files


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# experiment defaults\n"
        "scenario = switching\n"
        "steps = 7\n"
        "noise = zero\n"
        "alpha = 0.4\n"
    )
    code, out, _ = run(["simulate", "--config", str(cfg)], capsys)
    assert code == 0
    assert "steps=7" in out

    # explicit flags win over the file
    code, out, _ = run(
        ["simulate", "--config", str(cfg), "--steps", "3"], capsys)
    assert code == 0
    assert "steps=3" in out


def test_config_file_missing(capsys):
    code, _, err = run(
        ["simulate", "--config", "/nonexistent.cfg", "--scenario",
         "switching"], capsys)
    assert code == 1
    assert err.startswith("error: ")


def test_noise_spec_forms(capsys):
    for spec in ("zero", "gauss:0.01", "trunc-gauss:0.01:3"):
        code, _, _ = run(
            ["simulate", "--scenario", "switching", "--steps", "2",
             "--noise", spec], capsys)
        assert code == 0, spec


def test_console_script_installed():
    exe = shutil.which("cocolq")
    if exe is None:
        pytest.skip("console script not on PATH")
    proc = subprocess.run(
        [exe, "simulate", "--scenario", "switching", "--steps", "2",
         "--noise", "zero"],
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert proc.stdout.startswith("simulate:")
