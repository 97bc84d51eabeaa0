import json
import subprocess
import sys

import pytest

from coulombgas.cli import (
    SUITES,
    default_scenario,
    main,
    report_schema_version,
    run_suite,
    validate_scenario,
    write_report,
)


def test_schema_version_constant():
    assert report_schema_version() == "1.0.0"
    for suite in SUITES:
        assert default_scenario(suite)["schema_version"] == "1.0.0"


def test_default_configs_are_complete():
    for suite in SUITES:
        validate_scenario(default_scenario(suite))


def test_validate_rejects_missing_keys():
    scn = default_scenario("kernel-identities")
    del scn["k_max"]
    with pytest.raises(ValueError):
        validate_scenario(scn)
    with pytest.raises(ValueError):
        validate_scenario({"suite": "no-such-suite"})


def test_run_writes_reports_and_exit_codes(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(default_scenario("boson-commutators")))
    out = tmp_path / "reports"
    rc = main(["run", str(cfg), "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "boson-commutators.json").read_text())
    assert report["schema_version"] == "1.0.0"
    assert report["passed"] is True
    for c in report["checks"]:
        assert set(c) >= {"name", "anchor", "value", "tolerance", "pass"}
    assert (out / "boson-commutators_psi_psi_commutators.csv").exists()
    header = (out / "boson-commutators_psi_psi_commutators.csv").read_text().splitlines()[0]
    assert header == "potential,k,l,commutator,l*K_kl"


def test_config_error_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", str(bad)]) == 2
    incomplete = tmp_path / "inc.json"
    incomplete.write_text(json.dumps({"suite": "kernel-identities"}))
    assert main(["run", str(incomplete), "--out", str(tmp_path)]) == 2


def test_negative_control_exit_1(tmp_path):
    scn = default_scenario("kernel-identities")
    scn["debug"]["flip_generator_sign"] = True
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(scn))
    rc = main(["run", str(cfg), "--out", str(tmp_path / "r")])
    assert rc == 1
    report = json.loads((tmp_path / "r" / "kernel-identities.json").read_text())
    semis = [c for c in report["checks"] if c["name"].startswith("semigroup/")]
    assert semis and not any(c["pass"] for c in semis)


def test_reports_bitwise_reproducible(tmp_path):
    scn = default_scenario("boson-commutators")
    rep1, tab1 = run_suite(json.loads(json.dumps(scn)))
    rep2, tab2 = run_suite(json.loads(json.dumps(scn)))
    d1, d2 = tmp_path / "a", tmp_path / "b"
    write_report(rep1, tab1, d1)
    write_report(rep2, tab2, d2)
    for f1 in sorted(d1.iterdir()):
        f2 = d2 / f1.name
        assert f1.read_bytes() == f2.read_bytes()


def test_default_config_subcommand(capsys):
    rc = main(["default-config", "np-brackets"])
    assert rc == 0
    out = capsys.readouterr().out
    scn = json.loads(out)
    assert scn["suite"] == "np-brackets"


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "coulombgas.cli", "default-config", "boson-commutators"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["suite"] == "boson-commutators"


def test_report_schema_validates():
    """Minimal schema validation of a generated report."""
    rep, _ = run_suite(default_scenario("np-brackets"))
    assert isinstance(rep["schema_version"], str)
    assert rep["suite"] in SUITES
    assert isinstance(rep["scenario"], dict)
    assert isinstance(rep["passed"], bool)
    for c in rep["checks"]:
        assert isinstance(c["name"], str) and isinstance(c["anchor"], str)
        assert isinstance(c["value"], float) and isinstance(c["tolerance"], float)
        assert isinstance(c["pass"], bool)
