"""Shared pytest hooks.

The acceptance module records one pass/fail line per criterion; echo them
in the terminal summary so they survive output capture in plain runs.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
