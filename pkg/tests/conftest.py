import pytest

_LINES = []


@pytest.fixture
def report():
    """Collects PASS/FAIL lines that are printed again at the end of the run."""
    def add(line):
        print(line)
        _LINES.append(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
