"""Replay acceptance PASS/FAIL lines in the terminal summary.

The acceptance tests print one verdict line each, but pytest's capture hides
stdout for passing tests; emitting the collected lines through the terminal
reporter keeps them visible in a plain `pytest -v` run.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    module = sys.modules.get("test_acceptance")
    verdicts = getattr(module, "VERDICTS", None) if module else None
    if verdicts:
        terminalreporter.ensure_newline()
        terminalreporter.section("acceptance criteria", sep="-")
        for line in verdicts:
            terminalreporter.line(line)
