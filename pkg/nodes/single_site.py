"""
nodes/single_site.py
────────────────────────────────────────────────────────────
SINGLE-SITE NODE: one breather per frequency, at ε = 0.

Multiple single-site nodes run IN PARALLEL (one Send per frequency).
Each one:
  1. finds the libration whose Verlet rotation number is ω
  2. samples the continuous-flow orbit at that amplitude (initial guess)
  3. runs the Newton solver and writes the converged state
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import numpy as np

from kam.embedding import like, evaluate_grid
from kam.kam_step import KamState, make_state, single_site_guess, solve
from kam.lattice_model import LatticeModel
from schemas import ExperimentConfig
from utils import decay_function, history_table, save_state, write_csv

logger = logging.getLogger(__name__)


def origin(cfg: ExperimentConfig) -> np.ndarray:
    return np.zeros(cfg.model.dim, dtype=int)


def build_breather(cfg: ExperimentConfig, omega: float, kmax: Optional[int] = None,
                   rng: Optional[np.random.Generator] = None) -> KamState:
    """
    Converged single breather at ε = 0 on the configured window, centered
    at the origin. With experiment.perturbation > 0 the guess is perturbed
    by uniform noise of that size at the center site.
    """
    kmax = kmax or cfg.solver.kmax
    model_cfg = cfg.model.model_copy(update={"epsilon": 0.0})
    gamma = decay_function(cfg.decay, dim=cfg.model.dim)
    model = LatticeModel.from_config(model_cfg, gamma)
    solver = cfg.solver.model_copy(update={"kmax": kmax})
    K = single_site_guess(model, omega, origin(cfg), kmax, solver.dealias,
                          cfg.experiment.rotation_iterates, cfg.experiment.flow_samples)

    size = cfg.experiment.perturbation
    if size > 0:
        rng = rng or np.random.default_rng(cfg.experiment.seed)
        values = evaluate_grid(K)
        c = K.site_index(origin(cfg))
        values[..., [c, K.n_sites + c]] += rng.uniform(-size, size, size=values.shape[:-1] + (2,))
        K = like(K, values)

    return solve(model, make_state(K, omega), solver, gamma)


# ─────────────────────────────────────────────
# NODE FUNCTION
# ─────────────────────────────────────────────
def single_site_node(payload: dict) -> dict:
    """
    Reads:  payload["index"], payload["omega"], payload["config"], payload["out_dir"]
    Writes: {"breathers": [(index, state)], "artifacts": [...]}

    The (index, state) tuple lets the continuation node restore frequency
    order even though the branches finish in any order.
    """
    cfg: ExperimentConfig = payload["config"]
    index, omega = payload["index"], payload["omega"]
    rng = np.random.default_rng([cfg.experiment.seed, index])
    state = build_breather(cfg, omega, rng=rng)

    out = Path(payload["out_dir"])
    model_cfg = cfg.model.model_copy(update={"epsilon": 0.0})
    diagnostics = {"iterations": state.iterations, "error": state.error}
    artifacts = [
        save_state(out / f"breather_{index}_eps0.json", state, model_cfg, diagnostics, cfg.solver.dealias),
        write_csv(out / f"breather_{index}_newton.csv", history_table(state, omega=omega)),
    ]
    logger.info("breather %d (ω=%.6g): %d iterations, |E|=%.3e, |λ|=%.3e",
                index, omega, state.iterations, state.error, float(np.abs(state.lam).max()))
    return {"breathers": [(index, state)], "artifacts": artifacts}
