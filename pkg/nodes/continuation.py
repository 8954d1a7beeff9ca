"""
nodes/continuation.py
────────────────────────────────────────────────────────────
CONTINUATION NODE: carries every breather from ε = 0 along the ε schedule.

Runs after ALL single-site branches have finished (fan-in point).
Each ε is solved from the previous solution (warm start, bundle kept as
reference for the graph transform). A failure stops that breather and
reports the last ε that converged.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterator, List, Sequence, Tuple

import numpy as np
import pandas as pd

from kam.coupling import spatial_decay_fit
from kam.errors import ContinuationBreakdown, KamError
from kam.kam_step import KamState, center_geometry, solve
from kam.lattice_model import LatticeModel
from schemas import ExperimentConfig, PipelineState
from utils import decay_function, history_table, save_state, write_csv

logger = logging.getLogger(__name__)


def continue_in_eps(cfg: ExperimentConfig, state: KamState,
                    schedule: Sequence[float]) -> Iterator[Tuple[float, KamState]]:
    """
    Yield (ε, converged state) at every ε of the schedule. A failed step is
    halved and retried from the last converged state (the input state is
    taken as converged at ε = 0); ContinuationBreakdown once the step would
    drop below experiment.min_eps_step.
    """
    gamma = decay_function(cfg.decay, dim=cfg.model.dim)
    base = LatticeModel.from_config(cfg.model, gamma).on_sites(state.K.sites)
    min_step = cfg.experiment.min_eps_step
    last_good = 0.0
    for target in schedule:
        eps = target
        while True:
            try:
                state = solve(base.with_epsilon(eps), state, cfg.solver, gamma)
            except KamError as exc:
                if abs(eps - last_good) / 2 < min_step:
                    raise ContinuationBreakdown(f"continuation failed at ε={eps:.6g}: {exc}",
                                                last_good) from exc
                eps = last_good + (eps - last_good) / 2
                logger.warning("ε step failed (%s); retrying at ε=%.6g", exc, eps)
                continue
            last_good = eps
            if eps == target:
                break
            logger.info("continuation sub-step ε=%.6g: |E|=%.3e", eps, state.error)
            eps = target
        logger.info("continuation ε=%.4g: %d iterations, |E|=%.3e", eps, state.iterations, state.error)
        yield eps, state


def eps_schedule(cfg: ExperimentConfig) -> List[float]:
    return list(cfg.experiment.eps_schedule) or [cfg.model.epsilon]


def _row(eps: float, state: KamState, model: LatticeModel) -> dict:
    rate, _ = spatial_decay_fit(state.K)
    row = {"eps": eps, "iterations": state.iterations, "error": state.error,
           "lam": float(np.abs(state.lam).max()), "decay_rate": rate}
    try:
        avgA, _ = center_geometry(model, state).averages()
        row["avgA"] = float(np.linalg.norm(avgA, 2))
    except KamError:
        row["avgA"] = float("nan")
    return row


# ─────────────────────────────────────────────
# NODE FUNCTION
# ─────────────────────────────────────────────
def continuation_node(state: PipelineState) -> dict:
    """
    Reads:  state["breathers"], state["verb"], state["config"]
    Writes: state["continued"] (in frequency order), artifacts, summary
    """
    cfg = state["config"]
    breathers = [s for _, s in sorted(state["breathers"], key=lambda pair: pair[0])]
    summary = dict(state.get("summary") or {})
    if state["verb"] == "single-site":
        summary["breathers"] = [{"omega": float(b.omega[0]), "iterations": b.iterations,
                                 "error": b.error, "lam": float(np.abs(b.lam).max())} for b in breathers]
        return {"continued": breathers, "eps": 0.0, "summary": summary}

    out = Path(state["out_dir"])
    artifacts, continued, report = [], [], []
    for index, breather in enumerate(breathers):
        rows = []
        final = breather
        for eps, final in continue_in_eps(cfg, breather, eps_schedule(cfg)):
            model = LatticeModel.from_config(cfg.model).on_sites(final.K.sites).with_epsilon(eps)
            rows.append(_row(eps, final, model))
            model_cfg = cfg.model.model_copy(update={"epsilon": eps})
            artifacts.append(save_state(out / f"breather_{index}_eps{eps:g}.json", final, model_cfg,
                                        rows[-1], cfg.solver.dealias))
        table = pd.DataFrame(rows)
        artifacts.append(write_csv(out / f"breather_{index}_continuation.csv", table))
        artifacts.append(write_csv(out / f"breather_{index}_final_newton.csv",
                                   history_table(final, omega=float(final.omega[0]))))
        continued.append(final)
        report.append(table.to_dict(orient="records"))

    summary["continuation"] = report
    return {"continued": continued, "eps": eps_schedule(cfg)[-1], "artifacts": artifacts, "summary": summary}

