import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record ``(number, name, ok, detail)`` for the end-of-run acceptance summary."""
    def record(number, name, ok, detail=""):
        _CRITERIA[number] = (name, bool(ok), detail)
        print(f"criterion {number:2d} {name}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        name, ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {name}: {'PASS' if ok else 'FAIL'}  {detail}")
