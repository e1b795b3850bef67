"""Shared test plumbing: acceptance verdict reporting.

The acceptance tests record one PASS/FAIL line per criterion; emitting
them from the terminal-summary hook keeps them visible under pytest's
default fd-level capture.
"""

acceptance_verdicts: list[str] = []


def record_verdict(line: str) -> None:
    acceptance_verdicts.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_verdicts:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_verdicts:
            terminalreporter.write_line(line)
