import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.fixture
def detail(request):
    """Free-form notes a criterion test wants shown next to its verdict."""
    notes = []
    request.node._criterion_notes = notes
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title = marker.args
    verdict = "PASS" if report.passed else "FAIL"
    prev = _RESULTS.get(number)
    if prev is not None and prev[1] == "FAIL":
        verdict = "FAIL"
    notes = getattr(item, "_criterion_notes", [])
    _RESULTS[number] = (title, verdict, prev[2] + notes if prev else list(notes))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, verdict, notes = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number} [{verdict}] {title}")
        for note in notes:
            terminalreporter.write_line(f"    {note}")
