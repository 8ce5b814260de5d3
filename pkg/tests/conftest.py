import os

import numpy as np
import pytest

from utils._certificates import ModeNorms
from utils._config import Settings
from utils._controllers import NesterovParams
from utils._cost import CostConstants, QuadraticCost
from utils._plant import StabilityCertificate
from utils._simulator import ControllerConfig, DisturbanceSignal, IntegratorConfig, Scenario, SwitchingConfig
from utils._switching import constant_signal
from utils._experiments import scalar_plant


SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios")


def read_scenario(name):
    with open(os.path.join(SCENARIO_DIR, name), "r", encoding="utf-8") as handle:
        return handle.read()


SCALAR_SCENARIO = read_scenario("scalar.ini")


@pytest.fixture
def settings(tmp_path):
    return Settings(log_dir=str(tmp_path / "logs"), output_dir=str(tmp_path / "results"))


@pytest.fixture
def unit_plant():
    """ẋ = (−x + u + w)/ε, y = x: G = H = 1."""
    return scalar_plant(((-1.0, 1.0, 1.0),))


@pytest.fixture
def unit_cost():
    return QuadraticCost(R=[[1.0]], Qy=[[1.0]], y_ref=[0.0])


@pytest.fixture
def make_scenario(unit_plant, unit_cost):
    def build(controller=None, epsilon=0.125, step=None, horizon=2.0, w=0.5, x0=None, plant=None, cost=None,
              switching=None, disturbance=None, name="unit"):
        plant = plant or unit_plant
        cost = cost or unit_cost
        controller = controller or ControllerConfig(kind="gradient", u0=[1.0])
        epsilon = epsilon if isinstance(epsilon, tuple) else (epsilon,) * plant.S
        return Scenario(
            name=name,
            plant=plant,
            cost=cost,
            controller=controller,
            switching=switching or SwitchingConfig(signal=constant_signal(horizon), kind="constant"),
            epsilon=epsilon,
            disturbance=disturbance or DisturbanceSignal.constant([w] * plant.q),
            integrator=IntegratorConfig(step=step or min(epsilon) / 20.0, horizon=horizon),
            x0=x0,
        )

    return build


@pytest.fixture
def unit_certificate():
    """P = Q = 1."""
    return StabilityCertificate(P=np.eye(1), Q=np.eye(1), lambda_min_Q=1.0, lambda_min_P=1.0, lambda_max_P=1.0)


@pytest.fixture
def unit_norms():
    return ModeNorms(C=1.0, G=1.0, H=1.0, PAinvB=1.0, PAinvE=1.0)


@pytest.fixture
def unit_constants():
    return CostConstants(ell_u=0.0, ell_y=1.0, ell=1.0, mu=1.0, ell0=0.5, nu0=0.0)


@pytest.fixture
def unit_params():
    return NesterovParams(kappa=1.0, rho=1.0, delta=1.0, Delta=2.0, r0=True)


@pytest.fixture
def scenario_file(tmp_path):
    def write(text=SCALAR_SCENARIO, name="scalar.ini"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    return write
