import json
import subprocess
import sys

import pytest

from radavg import cli
from radavg.numerics import NonConvergenceError, Verdict

FAST = "power-p1-log-divergence"


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_catalogue_has_anchored_builtins(capsys):
    code, out, _ = run(["scenario", "--list"], capsys)
    assert code == 0
    cat = json.loads(out)["builtins"]
    assert len(cat) >= 6
    assert all(b["anchor"] and b["expected"] for b in cat)
    assert len({b["name"] for b in cat}) == len(cat)


def test_scenario_ok_exit_code_and_files(tmp_path, capsys):
    code, out, _ = run(["scenario", FAST, "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_OK
    assert out.strip() == f"{FAST}: ok"
    rep = json.loads((tmp_path / f"{FAST}.json").read_text())
    assert rep["status"] == "ok" and rep["mismatches"] == {}
    assert (tmp_path / f"{FAST}_Dp.csv").read_text().startswith("level,r,value,running_sup")


def test_reports_are_byte_identical_across_runs(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(["scenario", FAST, "--out", str(d)], capsys)[0] == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_mismatch_exit_code(monkeypatch, capsys):
    cat = cli.builtin_scenarios()
    s = cat[FAST]
    s.expected = {"Dp": "Bounded"}
    monkeypatch.setattr(cli, "builtin_scenarios", lambda: {FAST: s})
    code, out, _ = run(["scenario", FAST], capsys)
    assert code == cli.EXIT_MISMATCH
    assert "mismatch" in out and "DivergesLog" in out


def test_unknown_scenario_is_usage_error(capsys):
    code, _, err = run(["scenario", "no-such-thing"], capsys)
    assert code == cli.EXIT_USAGE and "no-such-thing" in err


@pytest.mark.parametrize(
    "argv",
    [[], ["bogus"], ["condition", "--weight", "powerlog:a=0,b=0", "--p", "2"],
     ["norm", "--weight", "powerlog:a=0,b=0", "--p", "x"]],
)
def test_argparse_errors_are_usage_errors(argv, capsys):
    assert run(argv, capsys)[0] == cli.EXIT_USAGE


def test_bad_weight_spec_is_usage_error(capsys):
    code, _, err = run(["classify", "--weight", "nosuch:a=1"], capsys)
    assert code == cli.EXIT_USAGE and err.startswith("error")


def test_numeric_failure_exit_code(monkeypatch, capsys):
    def boom(seed=0):
        raise NonConvergenceError("did not settle")

    monkeypatch.setattr(cli, "verify", boom)
    code, _, err = run(["verify"], capsys)
    assert code == cli.EXIT_NUMERIC and "did not settle" in err


def test_classify_command(tmp_path, capsys):
    code, out, _ = run(["classify", "--weight", "powerlog:a=1,b=0", "--levels", "20",
                        "--out", str(tmp_path)], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["Dhat"]["verdict"] == "Member"
    assert json.loads((tmp_path / "classify.json").read_text()) == rep


def test_condition_command(tmp_path, capsys):
    code, out, _ = run(["condition", "--which", "Dp", "--weight", "powerlog:a=0,b=0", "--p", "1",
                        "--levels", "30", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert json.loads(out)["result"]["verdict"]["kind"] == "DivergesLog"
    assert (tmp_path / "Dp.csv").exists()


def test_norm_command(capsys):
    code, out, _ = run(["norm", "--weight", "powerlog:a=0,b=0", "--p", "2", "--kind", "weak",
                        "--levels", "10"], capsys)
    assert code == 0
    assert json.loads(out)["value"] > 0


def test_verify_command(capsys):
    code, out, _ = run(["verify", "--seed", "3"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["ok"]
    assert rep["constants_fixed_point"] < 1e-9 and rep["fubini_residual"] < 1e-6


def test_verdict_matching_rules():
    assert cli.verdict_matches("Diverges", Verdict("DivergesLog", rate=0.7))
    assert not cli.verdict_matches("Diverges", Verdict("Infinite"))
    assert cli.verdict_matches("DivergesPower(2)", Verdict("DivergesPower", exponent=2.05))
    assert not cli.verdict_matches("DivergesPower(2)", Verdict("DivergesPower", exponent=1.0))
    assert cli.verdict_matches("Member", "Member")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "radavg.cli", "scenario", "--list"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and "builtins" in res.stdout
