import pytest

_lines: list[str] = []


@pytest.fixture
def verdict():
    """Record a criterion's PASS/FAIL line and echo it to stdout."""

    def record(line: str) -> None:
        _lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
