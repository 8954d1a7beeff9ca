"""
schemas/__init__.py
All Pydantic models (config sections, plans, reports) and the shared
graph state. Every config model forbids unknown keys, so a typo in a
config file fails loudly instead of being ignored.
"""

from __future__ import annotations

import math
import operator
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing_extensions import TypedDict

SCHEMA_VERSION = 1

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
SILVER = math.sqrt(2.0) - 1.0


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ─────────────────────────────────────────────
# MODEL  →  the lattice Hamiltonian and its map
# ─────────────────────────────────────────────
class CouplingPotential(_Strict):
    """V_k(s) = c2 s² + c4 s⁴ + ... acting between sites k apart."""
    range: int = Field(1, ge=1)
    coefficients: List[float] = Field(..., min_length=1,
                                      description="Even-power coefficients [c2, c4, ...].")


class ModelConfig(_Strict):
    onsite: Union[Literal["pendulum"], List[float]] = Field(
        "pendulum", description="'pendulum' (W = cos q − 1) or polynomial coefficients of W.")
    epsilon: float = 0.0
    gamma: float = Field(1.0, description="Strength of the default V_1(s) = γ s²/2.")
    coupling_range: int = Field(1, ge=1)
    coupling_potentials: List[CouplingPotential] = Field(default_factory=list)
    step: float = Field(0.05, gt=0)
    substeps: int = Field(10, ge=1)
    window_radius: int = Field(16, ge=1)
    dim: int = Field(1, ge=1, le=2)
    counterterm: Literal["action", "momentum"] = "action"
    flow_rtol: float = 1e-12
    flow_atol: float = 1e-12
    flow_horizon: float = 1e4
    interaction_limit: Optional[float] = Field(
        None, gt=0, description="Largest accepted C_V = sup_k |V_k''(0)| / Γ(k).")

    @field_validator("onsite")
    @classmethod
    def _hyperbolic_origin(cls, v):
        if v == "pendulum":
            return v
        coeffs = list(v) + [0.0, 0.0, 0.0]
        if coeffs[1] != 0.0:
            raise ValueError("W'(0) must vanish (fixed point at q = 0)")
        if not coeffs[2] < 0.0:
            raise ValueError("W''(0) must be negative (hyperbolic fixed point)")
        return v

    @model_validator(mode="after")
    def _ranges(self):
        if any(p.range > self.coupling_range for p in self.coupling_potentials):
            raise ValueError("coupling potential range exceeds coupling_range")
        return self


# ─────────────────────────────────────────────
# SOLVER  →  Newton, cohomology and splitting knobs
# ─────────────────────────────────────────────
class SolverConfig(_Strict):
    tol: float = 1e-11
    max_iter: int = Field(12, ge=0)
    kmax: int = Field(64, ge=1)
    dealias: float = Field(2.0, ge=1.0)
    rho: float = Field(0.05, ge=0.0)
    series_tol: float = 1e-14
    series_max_terms: int = 5000
    divisor_floor: float = 1e-13
    zero_avg_tol: float = 1e-12
    twist_floor: float = 1e-10
    parameter_floor: float = 1e-10
    graph_tol: float = 1e-12
    graph_max_sweeps: int = 400
    npower_max: int = 8
    center_threshold: float = 1e-6
    stop_norm: Literal["sup", "weighted"] = "sup"
    rate_nmax: int = Field(40, ge=4)
    max_increases: int = Field(2, ge=1)
    stall_ratio: float = Field(0.5, gt=0.0, lt=1.0,
                               description="A step makes progress when it cuts the error below "
                                           "stall_ratio times the previous one.")


# ─────────────────────────────────────────────
# FREQUENCIES
# ─────────────────────────────────────────────
class FrequencyConfig(_Strict):
    values: List[float] = Field(default_factory=list)
    presets: List[Literal["golden", "silver"]] = Field(default_factory=lambda: ["golden"])
    scale: float = Field(0.1, gt=0, description="Multiplier applied to preset frequencies.")
    nu: float = 1.0
    scan_kmax: int = 200

    def resolved(self) -> List[float]:
        if self.values:
            return list(self.values)
        table = {"golden": GOLDEN, "silver": SILVER}
        return [self.scale * table[name] for name in self.presets]


class DecayConfig(_Strict):
    alpha: float = 2.0
    rates: List[float] = Field(default_factory=lambda: [0.5])
    beta_tilde: float = 0.25
    radius: int = Field(1000, ge=10)
    paired: bool = False

    @model_validator(mode="after")
    def _ordered(self):
        if any(later >= earlier for earlier, later in zip(self.rates, self.rates[1:])):
            raise ValueError("decay rates must be strictly decreasing")
        if self.beta_tilde >= min(self.rates):
            raise ValueError("beta_tilde must be smaller than every rate")
        return self


class CascadePlan(_Strict):
    """Inputs of the multi-frequency cascade, one entry per stage."""
    frequencies: List[float]
    separations: List[int]
    decay_schedule: List[float]
    band_schedule: List[int]
    tol_schedule: List[float]
    smallness: float = Field(1e-3, description="Superposition error allowed before solving.")
    max_retries: int = 3

    @model_validator(mode="after")
    def _lengths(self):
        R = len(self.frequencies)
        if len(self.separations) != R - 1:
            raise ValueError("need one separation per added stage")
        for name in ("decay_schedule", "band_schedule", "tol_schedule"):
            if len(getattr(self, name)) != R:
                raise ValueError(f"{name} must have one entry per stage")
        if any(b >= a for a, b in zip(self.decay_schedule, self.decay_schedule[1:])):
            raise ValueError("decay schedule must be strictly decreasing")
        if min(self.decay_schedule) <= 0:
            raise ValueError("decay schedule must stay positive")
        return self


class ExperimentSection(_Strict):
    eps_schedule: List[float] = Field(default_factory=lambda: [0.0, 0.005, 0.01, 0.015, 0.02])
    min_eps_step: float = Field(1e-4, gt=0,
                                description="Smallest ε step tried after halving a failed one.")
    distances: List[int] = Field(default_factory=lambda: [8, 16, 24, 32])
    separation: int = 24
    cascade: Optional[CascadePlan] = None
    seed: int = 0
    perturbation: float = 0.0
    rotation_iterates: int = 4000
    flow_samples: Optional[int] = None


class ExperimentConfig(_Strict):
    model: ModelConfig = Field(default_factory=ModelConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    frequency: FrequencyConfig = Field(default_factory=FrequencyConfig)
    decay: DecayConfig = Field(default_factory=DecayConfig)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)


# ─────────────────────────────────────────────
# REPORTS  →  JSON-facing results
# ─────────────────────────────────────────────
class DiophantineModel(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")
    omega: List[float]
    nu: float
    kmax: int
    kappa: float
    worst_mode: List[int]
    resonant: bool
    flavor: Literal["map", "flow"] = "map"


class AxiomModel(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")
    alpha: float
    rate: float
    prefactor: float
    dim: int
    radius: int
    sum_total: float
    worst_convolution_ratio: float
    passed: bool


class DiagnosisReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")
    state_file: str
    error_sup: float
    error_weighted: float
    stored_error: Optional[float] = None
    isotropy: Optional[float] = None
    lambda_norm: float
    rates: Dict[str, float] = Field(default_factory=dict)
    diophantine: Optional[DiophantineModel] = None
    flags: List[str] = Field(default_factory=list)
    ok: bool = True


# ─────────────────────────────────────────────
# STATE  →  the shared memory of the experiment graph
# ─────────────────────────────────────────────
class PipelineState(TypedDict, total=False):
    """
    Every node reads from and writes to this dictionary.

    List fields annotated with operator.add are filled by parallel branches
    (one Send per frequency or per distance); consumers sort them by index.
    """
    verb: str
    config: ExperimentConfig
    out_dir: str

    # one (index, KamState) per frequency, appended by single_site workers
    breathers: Annotated[List[tuple], operator.add]
    # continued breathers, in frequency order, and the last ε reached
    continued: List[Any]
    eps: float

    # coupling scan rows (m, error) from scan workers
    scan_rows: Annotated[List[tuple], operator.add]
    scan_table: Any
    coupled: Any

    # cascade bookkeeping
    stage: int
    stage_states: Annotated[List[tuple], operator.add]

    # files written, appended by any node
    artifacts: Annotated[List[str], operator.add]
    summary: Dict[str, Any]
