import re

import pytest

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
CRITERIA: dict[str, tuple[bool, str]] = {}


def record(key: str, ok: bool, detail: str) -> bool:
    CRITERIA[key] = (bool(ok), detail)
    return bool(ok)


@pytest.fixture
def criterion():
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: (int(re.match(r"AC(\d+)", k).group(1)), k)):
        ok, detail = CRITERIA[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key:<6} {detail}")
