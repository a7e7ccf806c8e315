"""Collect one PASS/FAIL line per acceptance criterion for the terminal summary."""
import pytest

_outcomes = {}
_notes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test verifies")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    entry = _outcomes.setdefault(number, {"title": title, "results": []})
    entry["results"].append("SKIP" if report.skipped else "PASS" if report.passed else "FAIL")


@pytest.fixture
def note(request):
    """``note(text)`` attaches a measurement to the test's criterion line."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        if marker is not None:
            _notes.setdefault(marker.args[0], []).append(text)
    return add


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        entry = _outcomes[number]
        results = entry["results"]
        verdict = "FAIL" if "FAIL" in results else "SKIP" if "SKIP" in results else "PASS"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {entry['title']}")
        for text in _notes.get(number, []):
            terminalreporter.write_line(f"    {text}")
