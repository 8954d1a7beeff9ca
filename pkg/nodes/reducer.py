"""
nodes/reducer.py
────────────────────────────────────────────────────────────
SCAN REDUCER NODE: assembles the coupling scan table.

After all scan workers finish, their rows sit in state["scan_rows"] in
RANDOM order (parallel branches). The reducer sorts them by m, fits the
exponential decay rate and writes the CSV.
"""

from __future__ import annotations

import logging
from pathlib import Path

from kam.coupling import fit_decay_rate, is_strictly_decreasing, scan_table
from schemas import PipelineState
from utils import write_csv

logger = logging.getLogger(__name__)


def scan_reducer_node(state: PipelineState) -> dict:
    """
    Reads:  state["scan_rows"]
    Writes: state["scan_table"], summary["scan"], artifacts
    """
    cfg = state["config"]
    table = scan_table(state["scan_rows"])
    rate = fit_decay_rate(table)
    decreasing = is_strictly_decreasing(table["error"])
    beta_tilde = cfg.decay.beta_tilde
    within = bool(abs(rate - beta_tilde) <= 0.3 * beta_tilde) if rate == rate else False
    dominates = bool(rate >= 0.7 * beta_tilde) if rate == rate else False
    if not decreasing:
        logger.warning("superposition errors are not strictly decreasing in m")

    summary = dict(state.get("summary") or {})
    summary["scan"] = {"rows": table.to_dict(orient="records"), "fitted_rate": rate,
                       "beta_tilde": beta_tilde, "strictly_decreasing": decreasing,
                       "rate_within_30pct": within, "rate_at_least_beta_tilde": dominates}
    path = write_csv(Path(state["out_dir"]) / "coupling_scan.csv", table)
    return {"scan_table": table, "summary": summary, "artifacts": [path]}
