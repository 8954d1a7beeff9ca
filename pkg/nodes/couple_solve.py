"""
nodes/couple_solve.py
────────────────────────────────────────────────────────────
COUPLE-SOLVE NODE: Newton on the two-frequency torus.

Superposes the two continued breathers at experiment.separation, solves
the product torus and compares its non-degeneracy constants with the
single breathers'.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from kam.cohomology import check_sequence
from kam.coupling import superpose_states, twist_block_ratio
from kam.kam_step import center_geometry, solve
from kam.lattice_model import LatticeModel
from schemas import PipelineState
from utils import decay_function, history_table, save_state, write_csv

logger = logging.getLogger(__name__)


def _constants(state) -> dict:
    last = state.history[-1]
    return {"N_norm": last.N_norm, "avgA_inv": last.avgA_inv,
            "mu1": state.bundle.rates.mu1, "mu2": state.bundle.rates.mu2, "mu3": state.bundle.rates.mu3}


def _drift(coupled: dict, factors: list) -> dict:
    """Relative change of each constant against the worst factor value."""
    out = {}
    for key, value in coupled.items():
        worst = max(f[key] for f in factors)
        out[key] = abs(value - worst) / abs(worst) if worst else float("nan")
    return out


def couple_solve_node(state: PipelineState) -> dict:
    """
    Reads:  state["continued"], state["config"]
    Writes: state["coupled"], summary["coupled"], artifacts
    """
    cfg = state["config"]
    eps = state["eps"]
    s1, s2 = state["continued"]
    m = cfg.experiment.separation

    guess = superpose_states(s1, s2, m, cfg.solver.dealias)
    model = LatticeModel.from_config(cfg.model, decay_function(cfg.decay, dim=cfg.model.dim))
    model = model.on_sites(guess.K.sites).with_epsilon(eps)
    gamma = decay_function(cfg.decay, rate=cfg.decay.beta_tilde, dim=cfg.model.dim)
    coupled = solve(model, guess, cfg.solver, gamma)

    avgA, _ = center_geometry(model, coupled).averages()
    factors = [_constants(s) for s in (s1, s2)]
    constants = _constants(coupled)
    drift = _drift(constants, factors)
    omega = coupled.omega.tolist()
    report = check_sequence([omega[:1], omega[1:]], [cfg.frequency.nu + 1, cfg.frequency.nu + 2],
                            [cfg.frequency.scan_kmax] * 2)

    summary = dict(state.get("summary") or {})
    summary["coupled"] = {
        "separation": m, "iterations": coupled.iterations, "error": coupled.error,
        "lam": float(np.abs(coupled.lam).max()),
        "twist_block_ratio": twist_block_ratio(avgA, [1, 1]),
        "constants": constants, "drift": drift,
        "nondegeneracy_within_25pct": bool(all(v <= 0.25 for v in drift.values())),
        "kappa": [r.kappa for r in report],
    }
    model_cfg = cfg.model.model_copy(update={"epsilon": eps})
    out = Path(state["out_dir"])
    artifacts = [
        save_state(out / f"coupled_m{m}.json", coupled, model_cfg, summary["coupled"], cfg.solver.dealias),
        write_csv(out / f"coupled_m{m}_newton.csv", history_table(coupled, separation=m)),
    ]
    logger.info("coupled torus at m=%d: %d iterations, |E|=%.3e", m, coupled.iterations, coupled.error)
    return {"coupled": coupled, "summary": summary, "artifacts": artifacts}
