import numpy as np
import pytest

from voltvar_ord.config import load_config
from voltvar_ord.grid_model import GridModel, build_sensitivities, ieee37
from voltvar_ord.projection import FeasibleSetSpec, project_z

_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def feeder():
    return ieee37()


@pytest.fixture(scope="session")
def model(feeder):
    return build_sensitivities(feeder)


@pytest.fixture(scope="session")
def benchmark(feeder):
    """The shipped 80-scenario high-solar set."""
    cfg = load_config(None)
    return cfg.load_scenarios(feeder)


@pytest.fixture
def scalar_model():
    """One DER on a single line: R = 0.02, X = 0.04."""
    return GridModel(R=np.array([[0.02]]), X=np.array([[0.04]]), v0=1.0, der_buses=np.array([1]), q_hat=np.array([0.5]))


def random_stable_z(model, rng, epsilon=0.5):
    """A random point of the feasible rule set (projection of a random vector)."""
    d = model.der_buses.size
    z = np.concatenate(
        [rng.uniform(0.97, 1.03, d), rng.uniform(0.3, 3.0, d), rng.uniform(0.0, 0.03, d), rng.uniform(0.03, 0.12, d)]
    )
    return project_z(z, FeasibleSetSpec.from_model(model, epsilon))


@pytest.fixture(scope="session")
def acceptance_report():
    def report(number: int, name: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number} ({name}): {'PASS' if ok else 'FAIL'}" + (f"  [{detail}]" if detail else "")
        print(line)
        _ACCEPTANCE.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
