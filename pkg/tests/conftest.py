import pytest

_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line: ``report(n, ok, detail)``."""

    def add(number, ok, detail="", recorded=False):
        status = "PASS" if ok else "FAIL"
        if recorded:
            status += " (recorded)"
        line = f"criterion {number:>2}: {status}  {detail}".rstrip()
        _LINES.append((number, line))
        print(line)
        return ok

    return add


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES, key=lambda t: t[0]):
        terminalreporter.write_line(line)
