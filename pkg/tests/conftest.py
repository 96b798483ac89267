"""Shared pytest hooks: collects one pass/fail line per acceptance criterion
and prints them in the terminal summary."""

_criterion_lines: list[str] = []


def record_criterion(number: int, ok: bool, detail: str):
    status = "PASS" if ok else "FAIL"
    _criterion_lines.append(f"ACCEPTANCE {number}: {status} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if _criterion_lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_criterion_lines):
            terminalreporter.write_line(line)
