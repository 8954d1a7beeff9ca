"""
nodes/reporter.py
────────────────────────────────────────────────────────────
REPORT NODE: the final step: writes summary.json next to the artifacts.
"""

from __future__ import annotations

import json
from pathlib import Path

from schemas import PipelineState


def report_node(state: PipelineState) -> dict:
    """
    Reads:  state["summary"], state["artifacts"]
    Writes: artifacts (summary.json)
    """
    out = Path(state["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    summary = dict(state.get("summary") or {})
    summary["artifacts"] = sorted(state.get("artifacts", []))
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=2, default=float), encoding="utf-8")
    return {"summary": summary, "artifacts": [str(path)]}
