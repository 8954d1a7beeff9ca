"""
graph/builder.py
────────────────────────────────────────────────────────────
GRAPH BUILDER: wires all experiment nodes into a compiled LangGraph.

GRAPH TOPOLOGY:
  START
    │
    ▼
  [router] ── verb=cascade ──► [cascade_stage] ◄─┐
    │                               │   stage < R ┘
    │ fanout_breathers (parallel)   │ stage = R
    ▼                               ▼
  [single_site] × frequencies    [report] ──► END
    │                               ▲
    ▼                               │ single-site / continue
  [continuation] ───────────────────┤
    │ verb=couple: fanout_scan      │
    ▼                               │
  [scan_worker] × distances         │
    │                               │
    ▼                               │
  [scan_reducer] ──► [couple_solve] ┘
"""

from __future__ import annotations

from langgraph.graph import StateGraph, START, END

from schemas import PipelineState
from nodes import (
    router_node,
    single_site_node,
    continuation_node,
    scan_worker_node,
    scan_reducer_node,
    couple_solve_node,
    cascade_stage_node,
    report_node,
)
from graph.fanout import route_cascade, route_after_continuation, route_next


def build_graph():
    """Constructs and compiles the experiment StateGraph."""
    g = StateGraph(PipelineState)

    # ── Register Nodes ──────────────────────────────────────────
    g.add_node("router",        router_node)
    g.add_node("single_site",   single_site_node)
    g.add_node("continuation",  continuation_node)
    g.add_node("scan_worker",   scan_worker_node)
    g.add_node("scan_reducer",  scan_reducer_node)
    g.add_node("couple_solve",  couple_solve_node)
    g.add_node("cascade_stage", cascade_stage_node)
    g.add_node("report",        report_node)

    # ── Fixed Edges ──────────────────────────────────────────────
    g.add_edge(START,          "router")
    g.add_edge("single_site",  "continuation")   # waits for every breather
    g.add_edge("scan_worker",  "scan_reducer")   # waits for every distance
    g.add_edge("scan_reducer", "couple_solve")
    g.add_edge("couple_solve", "report")
    g.add_edge("report",       END)

    # ── Conditional Edges ────────────────────────────────────────
    g.add_conditional_edges("router", route_next, ["single_site", "cascade_stage"])
    g.add_conditional_edges("continuation", route_after_continuation, ["scan_worker", "report"])
    g.add_conditional_edges("cascade_stage", route_cascade, ["cascade_stage", "report"])

    return g.compile()


# Build once at module import time
app = build_graph()
