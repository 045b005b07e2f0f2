import pytest

from interop_etl.synth import h2_scenario

CRITERIA = ("AC1", "AC2", "AC3", "AC4", "AC5", "AC6", "AC7", "AC8")
_results: dict[str, tuple[str, str]] = {}


@pytest.fixture
def acceptance():
    """Record one verdict per acceptance criterion for the terminal summary."""

    def record(cid: str, passed, detail: str = ""):
        status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
        _results[cid] = (status, detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    ran = [c for c in CRITERIA if c in _results]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for cid in CRITERIA:
        status, detail = _results.get(cid, ("FAIL", "not reached (test errored or was deselected)"))
        terminalreporter.write_line(f"{cid} {status}: {detail}")


@pytest.fixture
def h2(tmp_path):
    return h2_scenario(tmp_path / "h2")
