import json

import pytest

from fichera.cli import (
    EXIT_CLAIM,
    EXIT_CONFIG,
    EXIT_OK,
    ConfigError,
    config_violations,
    main,
    validate_config,
)
from fichera.geometry import Kind


def test_violations_name_every_bad_field():
    raw = {"command": "eigen", "m": [16, 8], "R": [8, 6], "dt": -1, "seed": -3, "paths": 0}
    problems = config_violations(raw)
    fields = {p.split(":")[0] for p in problems}
    assert fields == {"domain", "m", "R", "dt", "seed", "paths"}
    assert "m: ladder not increasing" in problems


def test_unknown_command_and_short_ladder():
    assert any(p.startswith("command:") for p in config_violations({"command": "nope"}))
    short = {"command": "certify", "domain": {"kind": "corner", "n": 3}, "m": [8, 16]}
    assert "m: extrapolation needs at least three levels" in config_violations(short)
    box = {"command": "heat", "domain": {"kind": "box", "n": 1, "extents": [[-1, 1]]}, "m": [16]}
    assert config_violations(box) == []


def test_validate_config_builds_experiment():
    cfg = validate_config({"command": "exit", "domain": {"kind": "cross", "n": 2}, "x": [0, 0], "seed": 3})
    assert cfg.domain.kind is Kind.CROSS and cfg.seed == 3 and cfg.x == [0.0, 0.0]
    with pytest.raises(ConfigError) as info:
        validate_config({"command": "exit"})
    assert info.value.violations == ["domain: required for this command"]


def test_bad_config_exits_with_code_2(capsys):
    assert main(["eigen", "--domain", "corner", "--n", "2", "--m", "16,8"]) == EXIT_CONFIG
    assert "ladder not increasing" in capsys.readouterr().err


def test_unreadable_config_file(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text("{not json")
    assert main(["eigen", "--config", str(bad)]) == EXIT_CONFIG


def test_eigen_writes_outputs(tmp_path, capsys):
    rc = main(["eigen", "--domain", "box", "--extents=-1:1", "--m", "8,16,32", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    summary = json.loads((tmp_path / "eigen.json").read_text())
    assert summary["ladders"][0]["extrapolated"]["value"] == pytest.approx(2.4674011, abs=1e-5)
    assert list(tmp_path.glob("eigenvector_*.csv"))


def test_config_file_with_flag_override(tmp_path, monkeypatch):
    conf = tmp_path / "run.json"
    conf.write_text(json.dumps({"command": "eigen", "domain": {"kind": "corner", "n": 2}, "m": [4, 6, 8], "R": [4]}))
    monkeypatch.setenv("FICHERA_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["eigen", "--config", str(conf), "--m", "4,8,12"]) == EXIT_OK
    summary = json.loads((tmp_path / "env" / "eigen.json").read_text())
    assert [r["m"] for r in summary["ladders"][0]["results"]] == [4, 8, 12]


def test_exit_is_deterministic(tmp_path):
    args = ["exit", "--domain", "corner", "--n", "2", "--paths", "2000", "--dt", "1e-3", "--t-max", "3", "--seed", "9"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a" / "tail.csv").read_bytes() == (tmp_path / "b" / "tail.csv").read_bytes()
    cfg = json.loads((tmp_path / "a" / "mc_config.json").read_text())
    assert cfg["seed"] == 9 and "Philox" in cfg["stream_rule"]


def test_certify_reports_pass_or_claim_failure(tmp_path):
    rc = main(["certify", "--domain", "corner", "--n", "3", "--m", "8,16,32", "--R", "8", "--out", str(tmp_path)])
    assert rc in (EXIT_OK, EXIT_CLAIM)
    payload = json.loads((tmp_path / "certificate.json").read_text())
    assert (rc == EXIT_OK) == payload["passed"]


def test_certify_rejects_planar_domains(tmp_path):
    assert main(["certify", "--domain", "corner", "--n", "2", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_runtime_failure_maps_to_code_3(tmp_path):
    # start point outside the domain is only detected when the sampler is configured
    rc = main(["exit", "--domain", "corner", "--n", "2", "--x=-3,0", "--out", str(tmp_path)])
    assert rc == 3
