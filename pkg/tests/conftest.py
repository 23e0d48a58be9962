import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE_COUNT = 11

_criteria: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion for the summary table."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        _criteria[number] = (title, bool(ok), detail)
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, max(max(_criteria), ACCEPTANCE_COUNT) + 1):
        title, ok, detail = _criteria.get(n, ("did not reach its check", False, "test errored or was skipped"))
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title} | {detail}")
