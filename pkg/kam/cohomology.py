"""
kam/cohomology.py
────────────────────────────────────────────────────────────
SMALL DIVISORS: solvers for

    v(θ + ω) − v(θ) = h(θ)          (maps)
    Σ_j ω_j ∂v/∂θ_j = h(θ)          (flows)

and Diophantine quality scans of frequency vectors.

Fourier data is passed in FFT layout (see embedding.to_modes): the first
l axes are FFT bins, trailing axes are carried along untouched.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Literal, Sequence

import numpy as np
from numpy.typing import NDArray

from kam.embedding import GridField, fft_modes, from_modes, to_modes
from kam.errors import NonzeroAverage, ResonantMode

logger = logging.getLogger(__name__)

Flavor = Literal["map", "flow"]


# ─────────────────────────────────────────────
# DIOPHANTINE SCANS
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class DiophantineReport:
    omega: tuple
    nu: float
    kmax: int
    kappa: float
    worst_mode: tuple
    flavor: str = "map"

    @property
    def resonant(self) -> bool:
        return math.isinf(self.kappa)


def _small_value(kw: NDArray, flavor: Flavor) -> NDArray:
    if flavor == "flow":
        return np.abs(kw)
    return np.abs(kw - np.rint(kw))


def measure_diophantine(omega, nu: float, kmax: int, flavor: Flavor = "map") -> DiophantineReport:
    """
    κ = max over 0 < |k|₁ ≤ kmax of [|k|₁^ν · dist(k·ω, Z)]^(-1)
    (flow flavor: |k·ω| instead of the distance to Z).

    Exact resonances give κ = ∞. Ties go to the lexicographically smallest k.
    """
    if kmax < 1:
        raise ValueError("kmax must be at least 1")
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    l = omega.size
    best_kappa, best_k = 0.0, None
    rest_axes = [np.arange(-kmax, kmax + 1)] * (l - 1)
    rest = (np.stack(np.meshgrid(*rest_axes, indexing="ij"), axis=-1).reshape(-1, l - 1)
            if l > 1 else np.zeros((1, 0), dtype=int))
    rest_norm = np.abs(rest).sum(axis=1)

    # k and −k give the same value: scan the half-space whose first nonzero entry is positive
    leading_positive = np.ones(rest.shape[0], dtype=bool)
    if l > 1:
        nz = rest != 0
        first = np.where(nz.any(axis=1), nz.argmax(axis=1), 0)
        leading_positive = rest[np.arange(rest.shape[0]), first] > 0

    for k1 in range(0, kmax + 1):
        keep = rest_norm <= kmax - k1
        if k1 == 0:
            keep &= leading_positive
        ks = np.concatenate([np.full((int(keep.sum()), 1), k1), rest[keep]], axis=1)
        norm1 = np.abs(ks).sum(axis=1)
        nonzero = norm1 > 0
        ks, norm1 = ks[nonzero], norm1[nonzero]
        if not ks.size:
            continue
        kw = ks @ omega
        small = _small_value(kw, flavor)
        resonant = small <= 64 * np.finfo(float).eps * np.maximum(1.0, np.abs(kw))
        if np.any(resonant):
            j = int(np.argmax(resonant))
            if best_kappa < math.inf:
                best_kappa, best_k = math.inf, tuple(int(v) for v in ks[j])
            continue
        kappa = 1.0 / (norm1.astype(float) ** nu * small)
        j = int(np.argmax(kappa))
        if kappa[j] > best_kappa:
            best_kappa, best_k = float(kappa[j]), tuple(int(v) for v in ks[j])

    report = DiophantineReport(tuple(float(w) for w in omega), nu, kmax, best_kappa, best_k, flavor)
    logger.debug("measure_diophantine(%s): kappa=%.6g at %s", report.omega, best_kappa, best_k)
    return report


def check_sequence(omegas: Sequence, nu_schedule: Sequence[float], kmax_schedule: Sequence[int],
                   flavor: Flavor = "map") -> List[DiophantineReport]:
    """Diophantine reports of the concatenated truncations ω^(1), ω^(2), ..."""
    if not (len(omegas) == len(nu_schedule) == len(kmax_schedule)):
        raise ValueError("schedules must match the number of frequencies")
    reports = []
    parts: List[float] = []
    for r, (w, nu, kmax) in enumerate(zip(omegas, nu_schedule, kmax_schedule), start=1):
        parts.extend(np.atleast_1d(np.asarray(w, dtype=float)).tolist())
        l_r = len(parts) / r
        if nu <= r * l_r:
            raise ValueError(f"nu_{r} = {nu} must exceed r·l = {r * l_r:g}")
        reports.append(measure_diophantine(parts, nu, kmax, flavor))
    return reports


# ─────────────────────────────────────────────
# COHOMOLOGICAL EQUATIONS
# ─────────────────────────────────────────────
def _phase(omega, M: int, l: int) -> NDArray:
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    return sum(k * w for k, w in zip(fft_modes(M, l), omega))


def difference_divisors(omega, M: int, l: int) -> NDArray:
    """e^(2πi k·ω) − 1 on the FFT bins."""
    return np.exp(2j * np.pi * _phase(omega, M, l)) - 1.0


def directional_divisors(omega, M: int, l: int) -> NDArray:
    """2πi k·ω on the FFT bins."""
    return 2j * np.pi * _phase(omega, M, l)


def _check_divisors(div: NDArray, floor: float) -> None:
    mags = np.abs(div).ravel()
    mags[0] = np.inf
    j = int(np.argmin(mags))
    if mags[j] < floor:
        M = div.shape[0]
        index = np.unravel_index(j, div.shape)
        mode = tuple(int(i if i <= M // 2 else i - M) for i in index)
        raise ResonantMode(mode, float(mags[j]))


def assert_nonresonant(omega, M: int, l: int, floor: float = 1e-13) -> None:
    """Raise ResonantMode if any grid mode has |e^(2πik·ω) − 1| below the floor."""
    _check_divisors(difference_divisors(omega, M, l), floor)


def _solve(hat: NDArray, div: NDArray, l: int, zero_avg_tol: float, floor: float) -> NDArray:
    zero = (0,) * l
    avg = np.abs(hat[zero]).max(initial=0.0) if hat.ndim > l else abs(hat[zero])
    if avg > zero_avg_tol:
        raise NonzeroAverage(float(avg), zero_avg_tol)
    _check_divisors(div, floor)
    safe = div.copy()
    safe[zero] = 1.0
    out = hat / safe.reshape(safe.shape + (1,) * (hat.ndim - l))
    out[zero] = 0.0
    return out


def solve_difference(hat: NDArray, omega, l: int, zero_avg_tol: float = 1e-12,
                     divisor_floor: float = 1e-13) -> NDArray:
    """Zero-average v with v∘T_ω − v = h, mode by mode: v̂_k = ĥ_k/(e^(2πik·ω) − 1)."""
    div = difference_divisors(omega, hat.shape[0], l)
    return _solve(hat, div, l, zero_avg_tol, divisor_floor)


def solve_directional(hat: NDArray, omega, l: int, zero_avg_tol: float = 1e-12,
                      divisor_floor: float = 1e-13) -> NDArray:
    """Zero-average v with ω·∂v = h, mode by mode: v̂_k = ĥ_k/(2πi k·ω)."""
    div = directional_divisors(omega, hat.shape[0], l)
    return _solve(hat, div, l, zero_avg_tol, divisor_floor)


def solve_difference_grid(values: GridField, omega, l: int, zero_avg_tol: float = 1e-12,
                          divisor_floor: float = 1e-13) -> GridField:
    """solve_difference for grid data."""
    return from_modes(solve_difference(to_modes(values, l), omega, l, zero_avg_tol, divisor_floor), l)


def apply_difference(hat: NDArray, omega, l: int) -> NDArray:
    """Forward operator v ↦ v∘T_ω − v in modes."""
    div = difference_divisors(omega, hat.shape[0], l)
    return hat * div.reshape(div.shape + (1,) * (hat.ndim - l))


def apply_directional(hat: NDArray, omega, l: int) -> NDArray:
    div = directional_divisors(omega, hat.shape[0], l)
    return hat * div.reshape(div.shape + (1,) * (hat.ndim - l))
