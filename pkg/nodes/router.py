"""
nodes/router.py
────────────────────────────────────────────────────────────
ROUTER NODE: the very first step in the graph.

Its job: check that the config can serve the requested verb before any
expensive work starts, and decide where the graph goes next:
  - single-site / continue / couple → one single-site branch per frequency
  - cascade                         → the cascade stage loop
"""

from __future__ import annotations

import logging

from kam.cohomology import check_sequence
from kam.coupling import check_nonresonant
from kam.lattice_model import LatticeModel
from schemas import PipelineState
from utils import decay_function

logger = logging.getLogger(__name__)

EXPERIMENT_VERBS = ("single-site", "continue", "couple", "cascade")


# ─────────────────────────────────────────────
# NODE FUNCTION
# ─────────────────────────────────────────────
def router_node(state: PipelineState) -> dict:
    """
    Reads:  state["verb"], state["config"]
    Writes: summary (verb, frequencies, plan checks)
    """
    verb, cfg = state["verb"], state["config"]
    if verb not in EXPERIMENT_VERBS:
        raise ValueError(f"unknown experiment verb {verb!r}")
    LatticeModel.from_config(cfg.model, decay_function(cfg.decay, dim=cfg.model.dim))
    freqs = cfg.frequency.resolved()
    summary = {"verb": verb, "frequencies": freqs, "seed": cfg.experiment.seed}

    if verb == "couple" and len(freqs) != 2:
        raise ValueError("couple needs exactly two frequencies")
    if verb in ("single-site", "continue") and not freqs:
        raise ValueError("no frequency configured")

    if verb == "cascade":
        plan = cfg.experiment.cascade
        if plan is None:
            raise ValueError("cascade needs experiment.cascade in the config")
        centers = [0] + [-m for m in plan.separations]
        if not check_nonresonant([[c] + [0] * (cfg.model.dim - 1) for c in centers]):
            raise ValueError(f"cascade centers {centers} are spatially resonant")
        R = len(plan.frequencies)
        nus = [cfg.frequency.nu + r * 1.0 for r in range(1, R + 1)]
        reports = check_sequence(plan.frequencies, nus, [cfg.frequency.scan_kmax] * R)
        if any(rep.resonant for rep in reports):
            raise ValueError("cascade frequencies are resonant")
        summary["kappa"] = [rep.kappa for rep in reports]

    logger.info("router: verb=%s frequencies=%s", verb, freqs)
    return {"summary": summary, "stage": 0}

