"""
graph/fanout.py
────────────────────────────────────────────────────────────
FANOUT + ROUTING: every conditional edge of the experiment graph.

Two map steps use LangGraph's `Send`:
  router       → [single_site × one per frequency] → continuation
  continuation → [scan_worker × one per distance]  → scan_reducer

Each Send(node_name, payload) starts one more instance of that node with
its own payload; the operator.add fields of the state collect the results.
"""

from __future__ import annotations

from typing import List, Union

from langgraph.types import Send

from schemas import PipelineState


def fanout_breathers(state: PipelineState) -> List[Send]:
    """One single-site branch per configured frequency."""
    cfg = state["config"]
    return [
        Send("single_site", {"index": i, "omega": omega, "config": cfg, "out_dir": state["out_dir"]})
        for i, omega in enumerate(cfg.frequency.resolved())
    ]


def route_next(state: PipelineState) -> Union[str, List[Send]]:
    """router → cascade loop, or the per-frequency fanout."""
    if state["verb"] == "cascade":
        return "cascade_stage"
    return fanout_breathers(state)


def fanout_scan(state: PipelineState) -> List[Send]:
    """One scan worker per distance m."""
    cfg = state["config"]
    return [
        Send("scan_worker", {"m": m, "breathers": state["continued"], "config": cfg, "eps": state["eps"]})
        for m in cfg.experiment.distances
    ]


def route_after_continuation(state: PipelineState) -> Union[str, List[Send]]:
    if state["verb"] == "couple":
        return fanout_scan(state)
    return "report"


def route_cascade(state: PipelineState) -> str:
    """Loop on cascade_stage until every stage of the plan is in."""
    if state["stage"] < len(state["config"].experiment.cascade.frequencies):
        return "cascade_stage"
    return "report"
