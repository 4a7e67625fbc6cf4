import time

import pytest

from resonant_wave.qsolver import build_ground_state


@pytest.fixture(scope="session")
def ground():
    return build_ground_state(64)


@pytest.fixture(scope="session")
def ground16():
    return build_ground_state(16)


@pytest.fixture(scope="session")
def rctx():
    from resonant_wave.renorm import RenormContext

    return RenormContext.default(N=16, epsilon=1e-3)


@pytest.fixture(scope="session")
def nu_run(rctx):
    from resonant_wave.renorm import nu_fixed_point

    t = time.perf_counter()
    table = nu_fixed_point(rctx)
    return table, time.perf_counter() - t


@pytest.fixture(scope="session")
def gamma_run(rctx):
    from resonant_wave.renorm import gamma_fixed_point

    t = time.perf_counter()
    gamma, table, diffs = gamma_fixed_point(rctx, K=3)
    return gamma, table, diffs, time.perf_counter() - t


@pytest.fixture(scope="session")
def freq_run(rctx):
    from resonant_wave.frequencies import iterate_frequencies

    return iterate_frequencies(1e-3, rctx)


ACCEPTANCE = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance line: criterion number, pass flag and a short detail string."""

    def record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"\ncriterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
