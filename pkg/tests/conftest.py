import numpy as np
import pytest

from ldtnet.runtime import thread_limit

_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture(autouse=True, scope="session")
def single_thread():
    with thread_limit(1):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """``criterion(number, ok, detail, soft=False)`` records one acceptance line for the summary."""
    results = request.config.stash.setdefault(_CRITERIA, {})

    def record(number, ok, detail, soft=False):
        status = "PASS" if ok else ("SOFT-FAIL" if soft else "FAIL")
        results[number] = f"criterion {number}: {status}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_CRITERIA, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
