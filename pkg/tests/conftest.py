import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def verdict(request, capsys):
    """Record one PASS/FAIL line; all lines are repeated in the run summary."""
    def record(line: str) -> None:
        request.config.stash[_LINES].append(line)
        with capsys.disabled():
            print("\n" + line)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
