import numpy as np
import pytest

from causal_roundtrip.dgp import gen_stress_noninvertible
from causal_roundtrip.scm import DiffusionMechanism, EmpiricalMechanism, StructuralCausalModel


@pytest.fixture(scope="session")
def stress_data():
    return gen_stress_noninvertible(600, seed=42)


@pytest.fixture(scope="session")
def stress_scm(stress_data):
    """Small diffusion SCM on the stress-test graph; trained once per session."""
    mk = lambda: DiffusionMechanism(timesteps=50, hidden_dim=32, epochs=40, learning_rate=2e-3)
    mechs = {"W": EmpiricalMechanism(), "T": mk(), "Y": mk()}
    return StructuralCausalModel(stress_data.graph, mechs, random_state=1).fit(stress_data.data)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
