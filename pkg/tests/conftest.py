import pytest

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("ab")), k)):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture()
def report():
    def record(key: str, ok: bool, detail: str) -> None:
        line = f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[key] = line
        print(line)

    return record
