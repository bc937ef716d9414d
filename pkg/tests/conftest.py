import pytest

# filled by tests/test_acceptance.py: criterion number -> (passed, summary)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, summary = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {n:2d}. {summary}")


@pytest.fixture
def acceptance():
    def record(n: int, passed: bool, summary: str):
        ACCEPTANCE[n] = (bool(passed), summary)
        print(f"[{'PASS' if passed else 'FAIL'}] {n:2d}. {summary}")
        assert passed, summary
    return record
