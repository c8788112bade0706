import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def record_criterion(request):
    """Store a pass/fail line for the acceptance summary."""
    results = request.config.stash[_RESULTS]

    def record(number, title, ok, detail=""):
        results[number] = (title, ok, detail)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number} ({title}): {'PASS' if ok else 'FAIL'}  {detail}")
