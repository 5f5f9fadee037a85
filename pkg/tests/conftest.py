import os

import pytest

from fichera.claims import PROFILES, Suite

_RESULTS = []


@pytest.fixture(scope="session")
def suite():
    """One shared suite, so ladders computed for one criterion serve the rest."""
    return Suite(PROFILES[os.environ.get("FICHERA_ACCEPTANCE_PROFILE", "full")])


@pytest.fixture(scope="session")
def record_claim():
    return _RESULTS.append


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for r in sorted(_RESULTS, key=lambda r: r.id):
        terminalreporter.write_line(r.line())
    passed = sum(r.passed for r in _RESULTS)
    terminalreporter.write_line(f"{passed}/{len(_RESULTS)} criteria pass")
