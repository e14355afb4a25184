import pytest

CRITERIA: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def criterion():
    """Record a pass/fail line for an acceptance criterion; returns the verdict."""
    def record(number: int, passed: bool, detail: str) -> bool:
        CRITERIA.setdefault(number, []).append((bool(passed), detail))
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        checks = CRITERIA[number]
        verdict = "PASS" if all(ok for ok, _ in checks) else "FAIL"
        details = "; ".join(f"{'ok' if ok else 'FAILED'} {d}" for ok, d in checks)
        terminalreporter.write_line(f"CRITERION {number}: {verdict}  {details}")
