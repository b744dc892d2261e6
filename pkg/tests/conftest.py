import pytest

_criterion_lines: list[str] = []


@pytest.fixture
def criterion_report():
    """Collect one PASS/FAIL line per acceptance criterion for the summary."""

    def report(line: str) -> None:
        _criterion_lines.append(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.write_line(line)
