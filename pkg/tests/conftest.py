"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""
import pytest

CRITERIA = {
    "C1": "gradient check of every backward pass below 1e-4",
    "C2": "online gradient descent matches least squares; error never grows",
    "C3": "average importance and selection match a naive recomputation",
    "C4": "hand-traced progressive protocol identity",
    "C5": "parameter-count formula matches tensor enumeration",
    "C6": "desk benchmark: persistence above naive, OPTM-LSTM below naive",
    "C7": "repeated benchmark runs give byte-identical result files",
    "C8": "gate/state ranges and optimum-output structural invariants",
}

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    cid = marker.args[0]
    _outcomes[cid] = _outcomes.get(cid, True) and not rep.failed


def pytest_terminal_summary(terminalreporter):
    seen = [c for c in CRITERIA if c in _outcomes]
    if not seen:
        return
    terminalreporter.section("acceptance criteria")
    for cid in seen:
        verdict = "PASS" if _outcomes[cid] else "FAIL"
        terminalreporter.write_line(f"{cid} {verdict}  {CRITERIA[cid]}")
