"""
kam/errors.py
────────────────────────────────────────────────────────────
Failure modes of the torus solver.

Every exception derives from KamError so callers (the CLI, graph nodes)
can tell a numerical failure from a plain bad argument (ValueError).
"""

from __future__ import annotations

from typing import Any, List, Optional


class KamError(Exception):
    """Base class for every numerical failure raised by the solver."""


class WindowMismatch(KamError):
    """Two operators or fields live on different lattice windows."""


class AliasingError(KamError):
    """The collocation grid is too coarse for the requested Fourier band."""


class NonzeroAverage(KamError):
    """A cohomological equation received a right-hand side with nonzero mean."""

    def __init__(self, average: float, tol: float):
        super().__init__(f"average {average:.3e} exceeds tolerance {tol:.1e}")
        self.average = average
        self.tol = tol


class ResonantMode(KamError):
    """A small divisor inside the band fell below the divisor floor."""

    def __init__(self, mode: tuple, divisor: float):
        super().__init__(f"resonant mode k={mode} (|divisor| = {divisor:.3e})")
        self.mode = mode
        self.divisor = divisor


class NonHyperbolic(KamError):
    """The linearization at the background fixed point is not hyperbolic."""


class ContractionFailure(KamError):
    """The graph transform did not contract."""

    def __init__(self, message: str, history: Optional[List[float]] = None):
        super().__init__(message)
        self.history = history or []


class SeriesDivergence(KamError):
    """A hyperbolic Neumann series did not converge."""


class DegenerateEmbedding(KamError):
    """DKᵀDK is singular somewhere on the grid."""


class DegenerateTwist(KamError):
    """avg(A_λ) is singular."""


class DegenerateParameter(KamError):
    """avg(Q_λ) is singular: the counterterm cannot absorb the obstruction."""


class NoConvergence(KamError):
    """The Newton iteration diverged or ran out of iterations."""

    def __init__(self, message: str, history: List[Any], last_good: Any = None):
        super().__init__(message)
        self.history = history
        self.last_good = last_good


class IntegrationError(KamError):
    """The adaptive flow integrator failed (step-size underflow)."""


class FrequencyNotAttainable(KamError):
    """The requested rotation number is outside the libration range."""


class ContinuationBreakdown(KamError):
    """Continuation in ε failed; carries the last ε that converged."""

    def __init__(self, message: str, last_good_eps: float):
        super().__init__(message)
        self.last_good_eps = last_good_eps


class StageFailure(KamError):
    """A cascade stage failed after every separation retry."""

    def __init__(self, message: str, stage: int):
        super().__init__(message)
        self.stage = stage


class StateFileError(KamError):
    """A state file is corrupted or carries an unsupported schema version."""
