"""
nodes/worker.py
────────────────────────────────────────────────────────────
SCAN WORKER NODE: superposition error at ONE separation m.

Multiple workers run IN PARALLEL (one Send per distance).
Each worker receives its own payload (not the full state).
"""

from __future__ import annotations

from kam.coupling import scan_row
from kam.lattice_model import LatticeModel
from schemas import ExperimentConfig
from utils import decay_function


def scan_worker_node(payload: dict) -> dict:
    """
    Reads:  payload["m"], payload["breathers"], payload["config"], payload["eps"]
    Writes: {"scan_rows": [(m, weighted error, sup error)]}
    """
    cfg: ExperimentConfig = payload["config"]
    s1, s2 = payload["breathers"]
    model = LatticeModel.from_config(cfg.model, decay_function(cfg.decay, dim=cfg.model.dim))
    model = model.with_epsilon(payload["eps"])
    gamma_tilde = decay_function(cfg.decay, rate=cfg.decay.beta_tilde, dim=cfg.model.dim)
    row = scan_row(model, s1, s2, payload["m"], gamma_tilde, cfg.solver.rho, cfg.solver.dealias)
    return {"scan_rows": [row]}
