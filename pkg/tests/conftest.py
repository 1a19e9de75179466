import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from lirecon.ecm import reference_parameters  # noqa: E402
from lirecon.protocol import holds_as_rest, reconditioning_protocol  # noqa: E402
from lirecon.simulate import run_protocol  # noqa: E402


@pytest.fixture(scope="session")
def ref_params():
    return reference_parameters()


@pytest.fixture(scope="session")
def chain_trace(ref_params):
    return run_protocol(ref_params, ref_params.initial_state(), reconditioning_protocol(),
                        max_repetitions=3)


@pytest.fixture(scope="session")
def chain_trace_rest(ref_params):
    proto = holds_as_rest(reconditioning_protocol())
    return run_protocol(ref_params, ref_params.initial_state(), proto, max_repetitions=3)


SMALL_FLEET = dict(n_cells=15, currents=(1.0, 1.5, 2.0), fade_rate=1e-3, curve_cycles=40,
                   min_cycles=45, seed=11)


@pytest.fixture(scope="session")
def small_fleet():
    from lirecon.synthetic import SyntheticFleetSpec, gen_synthetic_fleet
    return gen_synthetic_fleet(SyntheticFleetSpec(**SMALL_FLEET))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, ok, why = results[n]
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({why})" if why and not ok else ""))
