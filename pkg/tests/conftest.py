import pytest

from levy_mv import builtin_paper_model

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def paper_model():
    return builtin_paper_model()


@pytest.fixture
def report_criterion():
    """Record a one-line PASS/FAIL verdict for the terminal summary."""
    def report(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
