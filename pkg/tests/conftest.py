import pytest

_LINES: list[str] = []


@pytest.fixture
def acceptance_report(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def report(tag: str, ok: bool, detail: str) -> None:
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        _LINES.append(line)
        with capsys.disabled():
            print("\n" + line)

    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
