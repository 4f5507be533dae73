import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def record(request):
    """Log one acceptance line; the assertion itself stays in the test."""
    def log(number, ok, detail, seconds=None):
        tail = f" [{seconds:.1f} s]" if seconds is not None else ""
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}{tail}"
        print(line)
        request.config.stash[_LINES].append((number, line))
    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
