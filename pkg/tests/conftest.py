import pytest

# criterion number -> (passed, description, detail)
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture
def report():
    """Record one acceptance criterion and print its pass/fail line."""

    def _report(number: int, description: str, passed: bool, detail: str = ""):
        ACCEPTANCE_RESULTS[number] = (bool(passed), description, detail)
        print(_line(number, *ACCEPTANCE_RESULTS[number]))
        return passed

    return _report


def _line(number, passed, description, detail):
    status = "PASS" if passed else "FAIL"
    return f"criterion {number:2d} {status}  {description}" + (f"  [{detail}]" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(_line(number, *ACCEPTANCE_RESULTS[number]))
