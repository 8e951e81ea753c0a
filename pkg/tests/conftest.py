import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# Lines recorded by the acceptance tests, echoed in the terminal summary.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
        terminalreporter.write_line(line)
