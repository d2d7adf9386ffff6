import numpy as np
import pytest

from trendkit.datasets import ingest

BUN_TABLE_T = (-0.275, 1.436, 1.436, 0.219, 6.525, 5.517, 5.472, 5.565)
BUN_TABLE_P = (0.905, 0.231, 0.231, 0.760)


@pytest.fixture(scope="session")
def bun():
    ds = ingest("bun")
    return ds.numeric("dose"), ds.numeric("BUN")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in sorted(RESULTS):
        terminalreporter.write_line(f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}")
