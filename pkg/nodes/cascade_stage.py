"""
nodes/cascade_stage.py
────────────────────────────────────────────────────────────
CASCADE STAGE NODE: adds one oscillating site per visit.

The graph loops back here until every frequency of the plan is in:
  stage 1      single breather of ω₁, continued to the target ε
  stage r > 1  superpose(stage r−1, breather of ω_r, m_r) and re-solve
After the last stage the per-site increments are tabulated.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from kam.coupling import cascade_stage, increment_ratios, stage_gamma, stage_increments
from kam.decay_spaces import max_prefactor
from kam.kam_step import KamState
from kam.lattice_model import LatticeModel
from nodes.continuation import continue_in_eps, eps_schedule
from nodes.single_site import build_breather, origin
from schemas import ExperimentConfig, PipelineState
from utils import decay_function, history_table, save_state, write_csv

logger = logging.getLogger(__name__)


def continued_breather(cfg: ExperimentConfig, omega: float, kmax: int, index: int) -> KamState:
    """Single breather of ω at band kmax, carried to the last ε of the schedule."""
    rng = np.random.default_rng([cfg.experiment.seed, index])
    state = build_breather(cfg, omega, kmax, rng)
    solver = cfg.solver.model_copy(update={"kmax": kmax})
    for _, state in continue_in_eps(cfg.model_copy(update={"solver": solver}), state, eps_schedule(cfg)):
        pass
    return state


def cascade_stage_node(state: PipelineState) -> dict:
    """
    Reads:  state["stage"], state["stage_states"], state["config"]
    Writes: stage_states (appended), stage (incremented), artifacts
    """
    cfg = state["config"]
    plan = cfg.experiment.cascade
    r = state.get("stage", 0)
    eps = eps_schedule(cfg)[-1]
    solver = cfg.solver
    dim = cfg.model.dim
    prefactor = max_prefactor(cfg.decay.alpha, 0.0, dim, cfg.decay.radius, cfg.decay.paired)

    breather = continued_breather(cfg, plan.frequencies[r], plan.band_schedule[r], r)
    if r == 0:
        current, separation = breather, 0
    else:
        previous = sorted(state["stage_states"], key=lambda pair: pair[0])[-1][1]
        model = LatticeModel.from_config(cfg.model, decay_function(cfg.decay, dim=dim))
        model = model.with_epsilon(eps)
        stage_solver = solver.model_copy(update={"kmax": plan.band_schedule[r]})
        outcome = cascade_stage(model, previous, breather, plan.separations[r - 1], stage_solver,
                                plan.tol_schedule[r], plan.smallness, plan.max_retries, r + 1,
                                stage_gamma(plan, r, cfg.decay.alpha, prefactor, dim),
                                plan.band_schedule[r])
        current, separation = outcome.state, outcome.separation

    out = Path(state["out_dir"])
    model_cfg = cfg.model.model_copy(update={"epsilon": eps})
    diagnostics = {"stage": r + 1, "separation": separation, "error": current.error}
    artifacts = [
        save_state(out / f"cascade_stage{r + 1}.json", current, model_cfg, diagnostics, solver.dealias),
        write_csv(out / f"cascade_stage{r + 1}_newton.csv", history_table(current, stage=r + 1)),
    ]
    update = {"stage": r + 1, "stage_states": [(r, current)], "artifacts": artifacts}

    if r + 1 == len(plan.frequencies):
        states = [s for _, s in sorted(state.get("stage_states", []), key=lambda p: p[0])] + [current]
        increments = stage_increments(states, origin(cfg), solver.dealias)
        ratios = increment_ratios(increments)
        table = pd.DataFrame({"stage": np.arange(1, len(states) + 1), "increment": increments,
                              "error": [s.error for s in states]})
        artifacts.append(write_csv(out / "cascade_increments.csv", table))
        summary = dict(state.get("summary") or {})
        summary["cascade"] = {"errors": [s.error for s in states], "increments": increments.tolist(),
                              "ratios": ratios.tolist(),
                              "summable": bool(np.all(ratios <= 0.75)) if ratios.size else True}
        update["summary"] = summary
    logger.info("cascade stage %d done (|E|=%.3e)", r + 1, current.error)
    return update
