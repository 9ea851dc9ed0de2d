"""Shared pytest plumbing.

The acceptance tests register one verdict line per criterion; echoing
them in the terminal summary keeps them visible even though pytest
captures test output at the file descriptor level.
"""

_verdicts = []


def record_verdict(line):
    _verdicts.append(line)


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.line(line)
