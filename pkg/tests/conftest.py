import pytest

VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict(request):
    """Record one summary line per acceptance criterion: call with
    ``(number, title, ok, detail)``; the line is printed at the end of the run."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        VERDICTS[number] = f"criterion {number} {title}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])
