import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with the measured values."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py::test_criterion_" not in rep.nodeid or rep.when != "call":
                continue
            detail = dict(rep.user_properties).get("criterion", rep.nodeid.split("::")[-1])
            lines.append((detail, "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for detail, verdict in sorted(lines, key=lambda x: int(x[0].split()[0]) if x[0][0].isdigit() else 99):
            terminalreporter.write_line(f"{verdict}  criterion {detail}")
