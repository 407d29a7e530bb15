"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_DETAILS = {}
_OUTCOMES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number): acceptance criterion checked by the test")
    config.addinivalue_line("markers", "slow: long-running Monte Carlo check")


@pytest.fixture
def record(request):
    """Store a human-readable measurement for the test's acceptance criterion."""
    marker = request.node.get_closest_marker("criterion")
    number = marker.args[0] if marker else None

    def _record(detail):
        _DETAILS.setdefault(number, []).append(detail)

    return _record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number = marker.args[0]
    if report.when == "setup" and report.passed:
        return
    passed = _OUTCOMES.get(number, True) and report.passed
    _OUTCOMES[number] = passed


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        status = "PASS" if _OUTCOMES[number] else "FAIL"
        detail = "; ".join(_DETAILS.get(number, []))
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {detail}")
