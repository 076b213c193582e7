import time

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def synthetic_run():
    """The end-to-end synthetic training and retrieval run, shared across modules."""
    from polarosm.experiment import run_synthetic

    t0 = time.perf_counter()
    run = run_synthetic()
    run.timings["total"] = time.perf_counter() - t0
    return run


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
