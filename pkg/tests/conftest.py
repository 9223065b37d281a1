import pytest

# (criterion number, passed, detail) collected by the acceptance tests
ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    def _report(number, passed, detail):
        line = (number, bool(passed), detail)
        ACCEPTANCE_LINES.append(line)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
