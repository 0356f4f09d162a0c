from pathlib import Path

import numpy as np
import pytest

from pmca_control import Dim2Config, ModelParams, RateFunction, build_matrices

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture(scope="session")
def scan_params():
    """Three-compartment scenario coefficients (the scanning/optimizing model)."""
    return ModelParams(
        n=3,
        tau=(0.25, 2.5, 0.0),
        beta=(0.0, 0.125, 0.25),
        kappa={(1, 2): 2.0, (1, 3): 1.0, (2, 3): 1.0},
    )


@pytest.fixture(scope="session")
def scan_mats(scan_params):
    return build_matrices(scan_params)


@pytest.fixture(scope="session")
def scan_rate():
    return RateFunction.rational(2.0, 1.0)


@pytest.fixture(scope="session")
def scan_bounds():
    return 1.0, 8.0


@pytest.fixture(scope="session")
def d2cfg():
    """Two-compartment chord problem matching the shipped scenario."""
    return Dim2Config(theta=-0.2, zeta=1.0, tau=0.1, beta=0.05, u_min=1.0, u_max=4.0)


@pytest.fixture(scope="session")
def two_scenario_path():
    return SCENARIO_DIR / "two_compartment.yaml"


@pytest.fixture(scope="session")
def three_scenario_path():
    return SCENARIO_DIR / "three_compartment.yaml"


@pytest.fixture(scope="session")
def expansion_scenario_path():
    return SCENARIO_DIR / "expansion_tail.yaml"


@pytest.fixture()
def rng():
    return np.random.default_rng(20260816)
