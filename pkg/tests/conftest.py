import pytest

_RESULTS = []


@pytest.fixture
def record():
    """``record(number, title, passed, detail)`` adds a line to the acceptance summary."""

    def add(number, title, passed, detail=""):
        _RESULTS.append((number, title, bool(passed), detail))
        return passed

    return add


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_RESULTS, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status} [{number}] {title}" + (f": {detail}" if detail else ""))
