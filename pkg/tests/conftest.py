import numpy as np
import pytest

from warmdsse.feeder import load_ieee37, parse_feeder
from warmdsse.measurements import build_ieee37_measurement_set


def two_bus_doc(z=0.1j, shunt=0.0, load=None):
    """Single-phase source bus "0" feeding bus "1" over impedance z."""
    doc = {
        "schema": "feeder/1",
        "name": "twobus",
        "buses": [{"id": "0", "phases": ["a"]}, {"id": "1", "phases": ["a"]}],
        "branches": [{
            "id": "0-1", "from": "0", "to": "1", "phases": ["a"],
            "Z_real": [[complex(z).real]], "Z_imag": [[complex(z).imag]],
            "Ysh_real": [[0.0]], "Ysh_imag": [[shunt]],
            "switchable": False, "closed": True,
        }],
        "injections": [],
    }
    if load is not None:
        doc["injections"].append({
            "id": "L1", "bus": "1", "kind": "load", "connection": "wye",
            "terminals": [["a"]], "rating": [complex(load).real, complex(load).imag],
        })
    return doc


@pytest.fixture(scope="session")
def ieee37():
    return load_ieee37()


@pytest.fixture(scope="session")
def ieee37_set(ieee37):
    return build_ieee37_measurement_set(ieee37)


@pytest.fixture(scope="session")
def twobus():
    return parse_feeder(two_bus_doc())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_state(rng, K, spread=0.3):
    return 1.0 + spread * (rng.standard_normal(K) + 1j * rng.standard_normal(K))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
