import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record a one-line PASS/FAIL verdict, echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(label, failures):
        line = f"{label}: {'FAIL' if failures else 'PASS'}"
        if failures:
            line += f" ({len(failures)} issue(s))"
        print(line)
        for f in failures:
            print("    " + f)
        lines.append(line)
        return line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
