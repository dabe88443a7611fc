import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# filled by tests/test_acceptance.py: (number, title, passed, seconds, note)
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, secs, note in sorted(ACCEPTANCE_LINES):
        status = "PASS" if ok else "FAIL"
        extra = f"  [{note}]" if note else ""
        terminalreporter.write_line(f"{status}  C{num:<2} {title}  ({secs:.2f} s){extra}")
