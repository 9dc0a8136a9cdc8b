"""Shared pytest hooks.

Acceptance checks record one line each through ``report_criterion``; the
lines are printed as a block at the end of every run, pass or fail.
"""

_CRITERIA: dict[int, str] = {}


def report_criterion(number: int, passed: bool, detail: str, gated: bool = True) -> None:
    status = "PASS" if passed else "FAIL"
    if not gated:
        status += " (reported, not gated)"
    line = f"criterion {number:2d}: {status} | {detail}"
    _CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
