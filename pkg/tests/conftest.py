import pytest

_RESULTS = {}


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion for the terminal summary."""

    def record(number, title, passed, detail):
        _RESULTS[number] = (title, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, passed, detail = _RESULTS[number]
        tr.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
