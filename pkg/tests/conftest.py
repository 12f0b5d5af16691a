import pytest

_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one ``CRITERION n: PASS/FAIL detail`` line; returns ``ok`` for asserting."""

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"CRITERION {label}: {'PASS' if ok else 'FAIL'} {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
