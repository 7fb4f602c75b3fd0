"""Shared pytest hooks.

The acceptance suite doubles as the release gate, so its verdicts are
echoed as one PASS/FAIL/SKIP line per criterion in the terminal summary.
"""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = set()
    for outcome, status in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL"), ("skipped", "SKIP")):
        for report in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" in report.nodeid and report.when in ("call", "setup"):
                lines.add(f"{status}: {report.nodeid.split('::')[-1]}")
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
