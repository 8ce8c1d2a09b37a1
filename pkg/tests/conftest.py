"""Acceptance-result registry.

test_acceptance.py records one row per numbered criterion; the terminal
summary prints a PASS/FAIL line for each so the verdicts survive scrollback.
"""

ACCEPTANCE = {}


def record_criterion(num, label, passed, detail=""):
    ACCEPTANCE[num] = {"label": label, "passed": bool(passed), "detail": detail}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        row = ACCEPTANCE[num]
        verdict = "PASS" if row["passed"] else "FAIL"
        line = f"[criterion {num:2d}] {verdict}  {row['label']}"
        if row["detail"]:
            line += f"  ({row['detail']})"
        terminalreporter.write_line(line)
