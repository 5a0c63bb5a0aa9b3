import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# (number, name, ok, detail) rows filled in by test_acceptance.py
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{num:02d}] {'PASS' if ok else 'FAIL'}  {name}: {detail}")
