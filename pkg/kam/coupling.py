"""
kam/coupling.py
────────────────────────────────────────────────────────────
COUPLING: building multi-breathers out of single ones.

    superpose   K(θ₁, θ₂) = K₁(θ₁) + τ^m K₂(θ₂)     (product torus)
    scan        invariance error of the superposition vs separation m
    cascade     stage r: solve(superpose(stage r−1, breather ω_r, m_r))

The background fixed point is the origin, so deviations simply add.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from kam.decay_spaces import DecayFunction, box_sites, one_norm, site_majorants, strip
from kam.embedding import (TorusEmbedding, default_grid_size, evaluate_grid, resite, truncate)
from kam.errors import KamError, StageFailure
from kam.kam_step import KamState, invariance_error, make_state, solve
from kam.lattice_model import LatticeModel
from schemas import CascadePlan, SolverConfig

logger = logging.getLogger(__name__)


# ─────────────────────────────────────────────
# TRANSLATION / SUPERPOSITION
# ─────────────────────────────────────────────
def _displacement(m, dim: int) -> NDArray:
    d = np.atleast_1d(np.asarray(m, dtype=int))
    if d.size == 1 and dim > 1:
        d = np.concatenate([d, np.zeros(dim - 1, dtype=int)])
    if d.size != dim:
        raise ValueError(f"displacement {m} does not match lattice dimension {dim}")
    return d


def translate(K: TorusEmbedding, m) -> TorusEmbedding:
    """τ^m K: the data of site i moves to site i − m (centers included)."""
    d = _displacement(m, K.dim)
    return replace(K, sites=K.sites - d, centers=K.centers - d)


def _embed_angles(K: TorusEmbedding, l_total: int, start: int) -> TorusEmbedding:
    """K as a torus on T^l_total, depending only on angles start..start+l−1."""
    k = K.kmax
    coeffs = np.zeros((2 * k + 1,) * l_total + (K.phase_dim,), dtype=complex)
    index = tuple(slice(None) if start <= a < start + K.l else k for a in range(l_total))
    coeffs[index + (slice(None),)] = K.coeffs
    winding = np.zeros((K.phase_dim, l_total), dtype=int)
    winding[:, start:start + K.l] = K.winding
    return replace(K, coeffs=coeffs, winding=winding)


def center_separation(c1: NDArray, c2: NDArray) -> int:
    disp = c1[:, None, :] - c2[None, :, :]
    return int(one_norm(strip(disp, c1.shape[1]), c1.shape[1]).min())


def hull_window(*site_sets: NDArray) -> NDArray:
    """All sites of the smallest box containing every given site, lexicographic order."""
    sites = np.concatenate(site_sets)
    axes = [np.arange(lo, hi + 1) for lo, hi in zip(sites.min(axis=0), sites.max(axis=0))]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=-1)


def superpose(K1: TorusEmbedding, K2: TorusEmbedding, m, dealias: float = 2.0,
              min_separation: int = 8) -> TorusEmbedding:
    """
    Product-torus embedding K₁(θ₁) + τ^m K₂(θ₂) on the box hull of both
    windows (sites between far-apart breathers are kept, at the background).
    The bands are padded to the larger kmax; centers are K₁'s followed by
    the translated centers of K₂.
    """
    if K1.dim != K2.dim:
        raise ValueError("embeddings live on lattices of different dimension")
    K2 = translate(K2, m)
    sep = center_separation(K1.centers, K2.centers)
    if sep < min_separation:
        logger.warning("superposing breathers only %d sites apart", sep)

    kmax = max(K1.kmax, K2.kmax)
    K1, K2 = truncate(K1, kmax, dealias), truncate(K2, kmax, dealias)
    l_total = K1.l + K2.l
    window = hull_window(K1.sites, K2.sites)
    A = resite(_embed_angles(K1, l_total, 0), window)
    B = resite(_embed_angles(K2, l_total, K1.l), window)
    return TorusEmbedding(A.coeffs + B.coeffs, window, np.concatenate([K1.centers, K2.centers]),
                          kmax, default_grid_size(kmax, dealias), A.winding + B.winding)


def superpose_states(s1: KamState, s2: KamState, m, dealias: float = 2.0,
                     min_separation: int = 8) -> KamState:
    """Superposed embedding with concatenated frequencies and counterterms (no bundle)."""
    K = superpose(s1.K, s2.K, m, dealias, min_separation)
    return make_state(K, np.concatenate([s1.omega, s2.omega]), np.concatenate([s1.lam, s2.lam]))


def superposition_error(model: LatticeModel, state: KamState, gamma: Optional[DecayFunction] = None,
                        rho: float = 0.0) -> Tuple[float, float]:
    """(sup, Γ-weighted) invariance error of a superposed state on its own window."""
    _, norms = invariance_error(model.on_sites(state.K.sites), state, gamma, rho)
    return norms.sup, norms.weighted


# ─────────────────────────────────────────────
# COUPLING SCAN
# ─────────────────────────────────────────────
def scan_row(model: LatticeModel, s1: KamState, s2: KamState, m: int, gamma: DecayFunction,
             rho: float = 0.0, dealias: float = 2.0) -> Tuple[int, float, float]:
    """(m, weighted error, sup error) of the superposition at separation m."""
    state = superpose_states(s1, s2, m, dealias, min_separation=0)
    sup, weighted = superposition_error(model, state, gamma, rho)
    logger.debug("coupling scan m=%d: weighted %.3e sup %.3e", m, weighted, sup)
    return int(m), weighted, sup


def coupling_scan(model: LatticeModel, s1: KamState, s2: KamState, distances: Sequence[int],
                  gamma_tilde: DecayFunction, beta: Optional[float] = None,
                  rho: float = 0.0, dealias: float = 2.0) -> pd.DataFrame:
    """Table of (m, error, error_sup) in the Γ_β̃ norm, sorted by m."""
    if beta is not None and gamma_tilde.rate >= beta:
        raise ValueError("β̃ must be smaller than the factor decay rate β")
    rows = [scan_row(model, s1, s2, m, gamma_tilde, rho, dealias) for m in distances]
    return scan_table(rows)


def scan_table(rows: Sequence[Tuple[int, float, float]]) -> pd.DataFrame:
    table = pd.DataFrame(sorted(rows), columns=["m", "error", "error_sup"])
    return table.reset_index(drop=True)


def fit_decay_rate(table: pd.DataFrame, column: str = "error") -> float:
    """−slope of log(error) against m; NaN when fewer than two positive errors."""
    usable = table[table[column] > 0]
    if len(usable) < 2:
        return float("nan")
    slope, _ = np.polyfit(usable["m"].to_numpy(float), np.log(usable[column].to_numpy(float)), 1)
    return float(-slope)


def is_strictly_decreasing(values: Sequence[float]) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))


# ─────────────────────────────────────────────
# SPATIAL NON-RESONANCE
# ─────────────────────────────────────────────
def check_nonresonant(centers, margin: Optional[int] = None) -> bool:
    """
    True when no site in a box around the centers is equidistant (in the
    1-norm) from more than two of them.
    """
    centers = np.asarray(centers, dtype=int)
    if centers.ndim == 1:
        centers = centers[:, None]
    if centers.shape[0] <= 2:
        return True
    dim = centers.shape[1]
    lo, hi = centers.min(axis=0), centers.max(axis=0)
    pad = int(margin if margin is not None else (hi - lo).max() + 1)
    mid = (lo + hi) // 2
    radius = int((hi - lo).max() // 2 + pad + 1)
    scan = box_sites(radius, dim) + mid
    dist = one_norm(strip(scan[:, None, :] - centers[None, :, :], dim), dim)
    dist = np.sort(dist, axis=1)
    # three equal sorted neighbours means three equidistant centers
    triples = (dist[:, 2:] == dist[:, 1:-1]) & (dist[:, 1:-1] == dist[:, :-2])
    return not bool(triples.any())


# ─────────────────────────────────────────────
# CASCADE
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class StageOutcome:
    state: KamState
    separation: int
    superposition_error: float
    attempts: int


def cascade_stage(model: LatticeModel, previous: KamState, breather: KamState, separation: int,
                  solver: SolverConfig, tol: float, smallness: float, max_retries: int,
                  stage: int, gamma: Optional[DecayFunction] = None,
                  band: Optional[int] = None) -> StageOutcome:
    """
    Add one breather at separation m and solve the product torus. A
    resonant center set, a superposition error above `smallness` or a
    failed solve doubles m, at most max_retries times.
    """
    band = band or previous.K.kmax
    prev = make_state(truncate(previous.K, band, solver.dealias), previous.omega, previous.lam)
    new = make_state(truncate(breather.K, band, solver.dealias), breather.omega, breather.lam)
    m = int(separation)
    last_error = "no attempt"
    for attempt in range(max_retries + 1):
        guess = superpose_states(prev, new, m, solver.dealias)
        if not check_nonresonant(guess.K.centers):
            logger.warning("stage %d: centers at m=%d are spatially resonant; doubling m", stage, m)
            last_error = f"resonant centers at m={m}"
            m *= 2
            continue
        window_model = model.on_sites(guess.K.sites)
        sup, _ = superposition_error(window_model, guess)
        if sup > smallness:
            logger.warning("stage %d: superposition error %.3e at m=%d above %.1e; doubling m",
                           stage, sup, m, smallness)
            last_error = f"superposition error {sup:.3e} at m={m}"
            m *= 2
            continue
        try:
            state = solve(window_model, guess, solver, gamma, tol=tol)
            logger.info("stage %d converged at m=%d (|E|=%.3e)", stage, m, state.error)
            return StageOutcome(state, m, sup, attempt + 1)
        except KamError as exc:
            last_error = str(exc)
            logger.warning("stage %d failed at m=%d (%s); doubling m", stage, m, exc)
            m *= 2
    raise StageFailure(f"stage {stage} failed after {max_retries} retries: {last_error}", stage)


def stage_gamma(plan: CascadePlan, stage: int, alpha: float, prefactor: float, dim: int) -> DecayFunction:
    return DecayFunction(alpha, plan.decay_schedule[stage], prefactor, dim)


def cascade(model: LatticeModel, plan: CascadePlan, solver: SolverConfig,
            make_breather: Callable[[float, int], KamState],
            gammas: Optional[Sequence[DecayFunction]] = None) -> List[StageOutcome]:
    """
    Stage 1 is the single breather of ω₁; stage r superposes stage r−1
    with the breather of ω_r at separation m_r and re-solves.
    `make_breather(ω, kmax)` returns a converged single breather.
    """
    R = len(plan.frequencies)
    gammas = list(gammas) if gammas is not None else [None] * R
    first = make_breather(plan.frequencies[0], plan.band_schedule[0])
    first = solve(model.on_sites(first.K.sites), first, solver, gammas[0], tol=plan.tol_schedule[0])
    outcomes = [StageOutcome(first, 0, 0.0, 1)]
    for r in range(1, R):
        breather = make_breather(plan.frequencies[r], plan.band_schedule[r])
        outcome = cascade_stage(model, outcomes[-1].state, breather, plan.separations[r - 1], solver,
                                plan.tol_schedule[r], plan.smallness, plan.max_retries, r + 1,
                                gammas[r], plan.band_schedule[r])
        outcomes.append(outcome)
    return outcomes


# ─────────────────────────────────────────────
# LIMIT AND NON-DEGENERACY DIAGNOSTICS
# ─────────────────────────────────────────────
def _lift(K: TorusEmbedding, l_total: int, kmax: int, window: NDArray, dealias: float) -> TorusEmbedding:
    K = truncate(K, kmax, dealias)
    return resite(_embed_angles(K, l_total, 0), window)


def stage_increments(states: Sequence[KamState], site, dealias: float = 2.0) -> NDArray:
    """
    Grid sup of K_r − K_{r−1} at one site for r = 1..R (K_0 = 0), each
    difference taken on the torus and window of stage r.
    """
    out = []
    previous: Optional[TorusEmbedding] = None
    for state in states:
        K = state.K
        j = K.site_index(site)
        values = evaluate_grid(K)
        if previous is not None:
            window = hull_window(K.sites, previous.sites)
            current = resite(K, window)
            values = evaluate_grid(current) - evaluate_grid(
                _lift(previous, K.l, K.kmax, window, dealias), current.grid_size)
            j = current.site_index(site)
            S = current.n_sites
        else:
            S = K.n_sites
        out.append(float(np.abs(values[..., [j, S + j]]).max()))
        previous = K
    return np.asarray(out)


def increment_ratios(increments: NDArray) -> NDArray:
    inc = np.asarray(increments, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return inc[1:] / inc[:-1]


def twist_block_ratio(avgA: NDArray, sizes: Sequence[int]) -> float:
    """max |off-diagonal block entry| / max |diagonal block entry| of avg(A)."""
    avgA = np.asarray(avgA)
    edges = np.cumsum([0] + list(sizes))
    if edges[-1] != avgA.shape[0]:
        raise ValueError("block sizes do not add up to the matrix size")
    diag = np.zeros_like(avgA, dtype=bool)
    for a, b in zip(edges[:-1], edges[1:]):
        diag[a:b, a:b] = True
    scale = np.abs(avgA[diag]).max()
    off = np.abs(avgA[~diag]).max(initial=0.0)
    return float(off / scale)


def spatial_decay_fit(K: TorusEmbedding, center=None, rho: float = 0.0,
                      floor: float = 1e-14) -> Tuple[float, pd.DataFrame]:
    """
    Exponential rate of the site majorants away from a center, from a
    log-linear fit over sites above `floor`·max. Returns (rate, profile).
    """
    c = np.atleast_1d(np.asarray(K.centers[0] if center is None else center))
    maj = site_majorants(K, rho)
    dist = one_norm(strip(K.sites - c, K.dim), K.dim)
    profile = pd.DataFrame({"distance": dist, "majorant": maj}).groupby("distance", as_index=False).max()
    keep = (profile["distance"] > 0) & (profile["majorant"] > floor * maj.max())
    if keep.sum() < 2:
        return float("nan"), profile
    slope, _ = np.polyfit(profile.loc[keep, "distance"].to_numpy(float),
                          np.log(profile.loc[keep, "majorant"].to_numpy(float)), 1)
    return float(-slope), profile
