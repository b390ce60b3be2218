import numpy as np
import pytest

from ctxsim.autodiff import Tape


@pytest.fixture(autouse=True)
def fresh_tape():
    with Tape() as tape:
        yield tape


@pytest.fixture
def rng():
    return np.random.default_rng(1234)



def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    import sys

    module = sys.modules.get("tests.test_acceptance") or sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(module.TITLES):
        parts = module.RESULTS.get(criterion)
        if not parts:
            terminalreporter.write_line(f"criterion {criterion:2d} NOT RUN  {module.TITLES[criterion]}")
            continue
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        details = " | ".join(detail for _, detail in parts)
        terminalreporter.write_line(f"criterion {criterion:2d} {status}  {module.TITLES[criterion]}: {details}")
