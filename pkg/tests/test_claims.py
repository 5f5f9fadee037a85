import json

import pytest

from fichera.claims import CLAIM_IDS, PROFILES, ClaimResult, ReproductionReport, Suite


def row(i, passed=True):
    return ClaimResult(i, f"claim {i}", "ref", "val", "tol", passed, 0.5, 10.0)


def test_line_format():
    assert row(3).line().startswith("[PASS] claim  3 claim 3: computed val; reference ref")
    assert row(3, False).line().startswith("[FAIL]")


def test_report_bookkeeping(tmp_path):
    rep = ReproductionReport("quick", [row(i, i != 5) for i in CLAIM_IDS])
    assert rep.complete and not rep.all_passed
    assert json.loads(rep.to_json())["rows"][4]["passed"] is False
    rep.write_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().count("FAIL") == 1
    with pytest.raises(ValueError):
        ReproductionReport("quick", [row(1), row(1)])


def test_cheap_claims_run_through_the_suite():
    suite = Suite(PROFILES["quick"])
    for i in (1, 4, 8):
        assert suite.run(i).passed
    with pytest.raises(ValueError):
        suite.run(13)
