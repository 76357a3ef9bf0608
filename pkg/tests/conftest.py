import pytest

_ACCEPTANCE = {}


@pytest.fixture
def acceptance_report():
    """Record one acceptance verdict; the lines are printed in the terminal summary."""
    def report(criterion: str, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[criterion] = (bool(ok), detail)
        print(f"{criterion}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
