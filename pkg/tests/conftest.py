"""
Shared small instances: a 9-site pendulum window with one converged
breather at ε = 0, and pairs of breathers carried to ε = 0.02 for the
coupled experiments.
"""

import math

import numpy as np
import pytest

from kam.kam_step import make_state, single_site_guess, solve
from kam.lattice_model import LatticeModel
from nodes.cascade_stage import continued_breather
from schemas import GOLDEN, DecayConfig, ExperimentConfig, ExperimentSection, ModelConfig, SolverConfig
from utils import decay_function

OMEGA = 0.1 * GOLDEN
OMEGA_2 = 0.1 * (math.sqrt(3) - 1)
EPS = 0.02


def coupled_cfg(radius: int, tol: float = 1e-10, separation: int = 4) -> ExperimentConfig:
    """Two-frequency experiment at band 20 whose ε schedule ends at EPS."""
    return ExperimentConfig(model=ModelConfig(window_radius=radius),
                            solver=SolverConfig(kmax=20, max_iter=12, tol=tol),
                            experiment=ExperimentSection(separation=separation))


def _continued_pair(cfg: ExperimentConfig) -> list:
    return [continued_breather(cfg, omega, cfg.solver.kmax, index)
            for index, omega in enumerate((OMEGA, OMEGA_2))]


@pytest.fixture(scope="session")
def model_cfg() -> ModelConfig:
    return ModelConfig(window_radius=4)


@pytest.fixture(scope="session")
def model(model_cfg) -> LatticeModel:
    return LatticeModel.from_config(model_cfg)


@pytest.fixture(scope="session")
def solver() -> SolverConfig:
    return SolverConfig(kmax=32, max_iter=12, tol=1e-11)


@pytest.fixture(scope="session")
def gamma():
    return decay_function(DecayConfig(), dim=1)


@pytest.fixture(scope="session")
def guess(model, solver):
    return single_site_guess(model, OMEGA, [0], solver.kmax, solver.dealias)


@pytest.fixture(scope="session")
def breather(model, solver, gamma, guess):
    """Converged single-site breather at ε = 0."""
    return solve(model, make_state(guess, OMEGA), solver, gamma)


@pytest.fixture(scope="session")
def narrow_pair():
    """Breathers of OMEGA and OMEGA_2 at ε = EPS on 7-site windows."""
    return _continued_pair(coupled_cfg(3))


@pytest.fixture(scope="session")
def wide_pair():
    """Same pair on 15-site windows, wide enough that truncation stays below the coupling."""
    return _continued_pair(coupled_cfg(7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
