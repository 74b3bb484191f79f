import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    detail = getattr(item, "criterion_detail", "")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict, detail = _CRITERIA[number]
        line = f"criterion {number:2d} [{verdict}] {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))


@pytest.fixture(scope="session")
def overfit_5():
    """Reference model trained until it reproduces a 5-word corpus exactly (criterion 8)."""
    from experiments import overfit_small_corpus
    return overfit_small_corpus()
