import pytest

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record_criterion():
    def record(num: str, ok: bool, detail: str):
        prev = ACCEPTANCE.get(num)
        if prev is not None:
            ok = ok and prev[0]
            detail = f"{prev[1]}; {detail}"
        ACCEPTANCE[num] = (bool(ok), detail)
        print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return record
