import pytest

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one verdict line per acceptance criterion."""
    def record(key, ok, detail):
        _ACCEPTANCE[key] = f"{key} {'PASS' if ok else 'FAIL'}  {detail}"
        print(_ACCEPTANCE[key])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[key])
