import pytest

ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the summary prints after the run."""
    def record(number: int, ok: bool | None, detail: str) -> bool | None:
        status = {True: "PASS", False: "FAIL", None: "BLOCKED"}[ok]
        line = f"criterion {number:2d}: {status}  {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
