"""Collects acceptance-criterion outcomes and prints them at the end of the run."""
import pytest

_outcomes = {}  # number -> [title, passed, details]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.fixture
def detail(request):
    """Attach a one-line measurement to the criterion under test."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        entry = _outcomes.setdefault(marker.args[0], [marker.args[1], True, []])
        entry[2].append(text)
        print(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and report.passed:
        return
    entry = _outcomes.setdefault(marker.args[0], [marker.args[1], True, []])
    if report.failed or report.skipped:
        entry[1] = False


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        title, passed, details = _outcomes[number]
        terminalreporter.write_line(f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}; {'; '.join(details)}")
