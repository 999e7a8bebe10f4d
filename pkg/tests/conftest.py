import pytest

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def acceptance():
    """Record one acceptance line: record(id, passed, detail)."""

    def record(cid: str, passed: bool, detail: str):
        line = f"[{'PASS' if passed else 'FAIL'}] {cid}: {detail}"
        print(line)
        _ACCEPTANCE.append((cid, passed, detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, passed, detail in sorted(_ACCEPTANCE, key=lambda r: int(r[0].split()[-1])):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {cid}: {detail}")
