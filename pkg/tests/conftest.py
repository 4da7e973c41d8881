import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> (verdict, detail), filled in by the acceptance suite
VERDICTS = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(VERDICTS):
        verdict, detail = VERDICTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {detail}")
