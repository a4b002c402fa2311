import os

import numpy as np
import pytest
from hypothesis import settings

from fockga.circuitfile import read_circuit

CIRCUITS = os.path.join(os.path.dirname(__file__), "..", "src", "fockga", "data", "circuits")
CONFIGS = os.path.join(os.path.dirname(__file__), "..", "src", "fockga", "data", "configs")

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def circuit_path(name):
    return os.path.join(CIRCUITS, f"{name}.circuit")


def config_path(name):
    return os.path.join(CONFIGS, f"{name}.yaml")


@pytest.fixture
def load_circuit():
    return lambda name: read_circuit(circuit_path(name))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_ket(rng, n_modes, t_max):
    from fockga.fock import KetState, Truncation
    d = (t_max + 1) ** n_modes
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return KetState(v / np.linalg.norm(v), n_modes, Truncation(t_max))
