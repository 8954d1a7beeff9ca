"""
utils/__init__.py
Shared helpers: logging setup, config loading, decay functions from the
config, the state-file codec and CSV export.
Keeping them here avoids circular imports between nodes, graph and main.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from kam.decay_spaces import DecayFunction, max_prefactor
from kam.embedding import TorusEmbedding, default_grid_size
from kam.errors import StateFileError
from kam.kam_step import KamState, StepRecord
from schemas import SCHEMA_VERSION, DecayConfig, ExperimentConfig, ModelConfig

load_dotenv()

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


# ─────────────────────────────────────────────
# ENVIRONMENT / LOGGING
# ─────────────────────────────────────────────
def setup_logging(level: Optional[str] = None) -> None:
    """basicConfig once; the level comes from BREATHER_LOG_LEVEL unless given."""
    level = (level or os.getenv("BREATHER_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)


def default_out_dir() -> str:
    return os.getenv("BREATHER_OUT", "out")


# ─────────────────────────────────────────────
# CONFIG
# ─────────────────────────────────────────────
def load_config(path: Optional[str]) -> ExperimentConfig:
    """ExperimentConfig from a JSON file; defaults everywhere when path is None."""
    if path is None:
        return ExperimentConfig()
    text = Path(path).read_text(encoding="utf-8")
    return ExperimentConfig.model_validate_json(text)


def model_hash(cfg: ModelConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def decay_function(decay: DecayConfig, rate: Optional[float] = None, dim: int = 1) -> DecayFunction:
    """Γ with the safe prefactor for the configured α (and rate, default the first one)."""
    rate = decay.rates[0] if rate is None else rate
    a = max_prefactor(decay.alpha, rate, dim, decay.radius, decay.paired)
    return DecayFunction(decay.alpha, rate, a, dim)


# ─────────────────────────────────────────────
# STATE FILES  (hex floats, bit-exact round trip)
# ─────────────────────────────────────────────
def _hex(values: np.ndarray) -> list:
    return [float(v).hex() for v in np.asarray(values, dtype=float).ravel()]


def _unhex(items: Iterable[str], shape) -> np.ndarray:
    try:
        return np.array([float.fromhex(s) for s in items], dtype=float).reshape(shape)
    except (TypeError, ValueError) as exc:
        raise StateFileError(f"corrupted array: {exc}") from exc


def state_to_dict(state: KamState, model_cfg: ModelConfig,
                  diagnostics: Optional[Dict[str, Any]] = None, dealias: float = 2.0) -> dict:
    K = state.K
    return {
        "schemaVersion": SCHEMA_VERSION,
        "modelHash":     model_hash(model_cfg),
        "model":         model_cfg.model_dump(mode="json"),
        "l":             K.l,
        "kmax":          K.kmax,
        "gridSize":      K.grid_size,
        "dealias":       dealias,
        "sites":         K.sites.tolist(),
        "centers":       K.centers.tolist(),
        "winding":       K.winding.tolist(),
        "omega":         _hex(state.omega),
        "lambda":        _hex(state.lam),
        "coeffsRe":      _hex(K.coeffs.real),
        "coeffsIm":      _hex(K.coeffs.imag),
        "history":       [r.as_row() for r in state.history],
        "diagnostics":   diagnostics or {},
    }


def state_from_dict(data: dict) -> Tuple[KamState, ModelConfig, dict]:
    version = data.get("schemaVersion")
    if version != SCHEMA_VERSION:
        raise StateFileError(f"unsupported schemaVersion {version!r} (expected {SCHEMA_VERSION})")
    try:
        model_cfg = ModelConfig.model_validate(data["model"])
        if model_hash(model_cfg) != data["modelHash"]:
            raise StateFileError("model hash does not match the stored model")
        l, kmax = int(data["l"]), int(data["kmax"])
        sites = np.asarray(data["sites"], dtype=int)
        shape = (2 * kmax + 1,) * l + (2 * sites.shape[0],)
        coeffs = _unhex(data["coeffsRe"], shape) + 1j * _unhex(data["coeffsIm"], shape)
        grid = int(data.get("gridSize") or default_grid_size(kmax, data.get("dealias", 2.0)))
        K = TorusEmbedding(coeffs, sites, np.asarray(data["centers"], dtype=int), kmax, grid,
                           np.asarray(data["winding"], dtype=int))
        omega = _unhex(data["omega"], (l,))
        lam = _unhex(data["lambda"], (-1,))
        history = tuple(StepRecord(**row) for row in data.get("history", []))
    except KeyError as exc:
        raise StateFileError(f"missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise StateFileError(f"corrupted state file: {exc}") from exc
    return KamState(K, lam, omega, None, history), model_cfg, data.get("diagnostics", {})


def save_state(path, state: KamState, model_cfg: ModelConfig,
               diagnostics: Optional[Dict[str, Any]] = None, dealias: float = 2.0) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(state_to_dict(state, model_cfg, diagnostics, dealias), indent=1),
                    encoding="utf-8")
    logger.info("state written to %s", path)
    return str(path)


def load_state(path) -> Tuple[KamState, ModelConfig, dict]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise StateFileError(f"{path} is not valid JSON: {exc}") from exc
    return state_from_dict(data)


# ─────────────────────────────────────────────
# CSV
# ─────────────────────────────────────────────
def write_csv(path, table: pd.DataFrame) -> str:
    """Every exported table carries a schema_version column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = table.copy()
    out.insert(0, "schema_version", SCHEMA_VERSION)
    out.to_csv(path, index=False)
    logger.info("table written to %s", path)
    return str(path)


def history_table(state: KamState, **labels) -> pd.DataFrame:
    table = pd.DataFrame([r.as_row() for r in state.history])
    for key, value in labels.items():
        table[key] = value
    return table
