"""
kam/kam_step.py
────────────────────────────────────────────────────────────
QUASI-NEWTON STEP: one correction (Δ, Λ) of the invariance equation

    F_λ(K(θ)) − K(θ + ω) = E(θ)

and the outer solver that iterates it.

The correction is split along the invariant bundles:

  center      Δ^c = M̃ v, M̃ = [Π^c DK, Y] reduces the cocycle to
              [[I, A_λ], [0, I]]; two difference equations for v with the
              counterterm Λ chosen to kill avg(T₂).
  hyperbolic  Neumann series along the rotation orbit, forward on E^s,
              backward (inverse cocycle) on E^u.

Grid convention: a field g(θ) that "lives" at the fiber θ+ω (E, DF·Δ, ...)
is moved to that fiber with grid_shift(g, −ω) before applying objects
sampled at θ+ω, and moved back with grid_shift(·, +ω).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import solve_ivp

from kam.cohomology import assert_nonresonant, solve_difference_grid
from kam.decay_spaces import DecayFunction, embedding_norm
from kam.embedding import (GridField, TorusEmbedding, average, default_grid_size, derivative,
                           evaluate_grid, from_grid, grid_shift, like, rotate)
from kam.errors import (DegenerateEmbedding, DegenerateParameter, DegenerateTwist,
                        FrequencyNotAttainable, IntegrationError, KamError, NoConvergence,
                        SeriesDivergence)
from kam.lattice_model import LatticeModel, symplectic_form
from kam.splitting import (Cocycle, SplittingBundle, build_cocycle, graph_refine, initial_splitting,
                           measure_rates)
from schemas import SolverConfig

logger = logging.getLogger(__name__)


# ─────────────────────────────────────────────
# STATE
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class StepRecord:
    iteration: int
    error_sup: float
    error_weighted: float
    lam_norm: float
    isotropy: float = float("nan")
    N_norm: float = float("nan")
    avgA_inv: float = float("nan")
    avgQ_inv: float = float("nan")
    mu1: float = float("nan")
    mu2: float = float("nan")
    mu3: float = float("nan")
    defect: float = float("nan")

    def as_row(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class KamState:
    K: TorusEmbedding
    lam: NDArray
    omega: NDArray
    bundle: Optional[SplittingBundle] = None
    history: Tuple[StepRecord, ...] = ()

    @property
    def l(self) -> int:
        return self.K.l

    @property
    def iterations(self) -> int:
        return max(len(self.history) - 1, 0)

    @property
    def error(self) -> float:
        return self.history[-1].error_sup if self.history else float("nan")


def make_state(K: TorusEmbedding, omega, lam=None) -> KamState:
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if omega.size != K.l:
        raise ValueError(f"frequency has {omega.size} entries for a torus on T^{K.l}")
    n_centers = K.centers.shape[0]
    lam = np.zeros(n_centers) if lam is None else np.asarray(lam, dtype=float)
    if lam.shape != (n_centers,):
        raise ValueError("one counterterm entry per center is required")
    return KamState(K, lam, omega)


@dataclass(frozen=True)
class ErrorNorms:
    sup: float
    weighted: float


# ─────────────────────────────────────────────
# ERROR
# ─────────────────────────────────────────────
def invariance_error(model: LatticeModel, state: KamState, gamma: Optional[DecayFunction] = None,
                     rho: float = 0.0) -> Tuple[GridField, ErrorNorms]:
    """E(θ) = F_λ(K(θ)) − K(θ+ω) on the grid, with its sup and ∥·∥_{ρ,c,Γ} norms."""
    K = state.K
    E = model.family_F_lambda(K.centers, state.lam, evaluate_grid(K)) - evaluate_grid(rotate(K, state.omega))
    sup = float(np.abs(E).max())
    weighted = float("nan")
    if gamma is not None:
        E_hat = from_grid(E, K.kmax, sites=K.sites, centers=K.centers)
        weighted = embedding_norm(E_hat, K.centers, gamma, rho)
    return E, ErrorNorms(sup, weighted)


# ─────────────────────────────────────────────
# CENTER GEOMETRY
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class CenterGeometry:
    DF: GridField       # DF_λ(K(θ))             (..., n, n)
    dlam: GridField     # ∂F_λ/∂λ(K(θ))          (..., n, C)
    DK: GridField       # (..., n, l)
    N: GridField        # (DKᵀDK)^(-1)           (..., l, l)
    P: GridField        # DK N                   (..., n, l)
    Jc: GridField       # Ω on the E^c basis     (..., 2l, 2l)
    Mt: GridField       # [Π^c DK, Y]            (..., n, 2l)
    Linv: GridField     # (M̃ᵀJM̃)^(-1) M̃ᵀJ      (..., 2l, n)
    A: GridField        # twist                  (..., l, l)
    H: GridField        # M̃^(-1)(θ+ω) Π^c ∂λF    (..., 2l, C)
    L: GridField        # DKᵀ J DK               (..., l, l)
    center_mismatch: float
    inverse_defect: float

    @property
    def Q(self) -> GridField:
        l = self.A.shape[-1]
        return self.H[..., l:, :]

    def averages(self) -> Tuple[NDArray, NDArray]:
        l = self.A.shape[-1]
        return average(self.A, l), average(self.Q, l)


def _sup_norm(field: GridField) -> float:
    return float(np.linalg.norm(field, ord=2, axis=(-2, -1)).max())


def center_geometry(model: LatticeModel, state: KamState) -> CenterGeometry:
    """
    Per grid point: N, P, J^c, M̃ and its left inverse, the twist A_λ,
    Q_λ (lower block of H) and the isotropy defect L.
    """
    if state.bundle is None:
        raise ValueError("center_geometry needs a splitting bundle")
    K, omega, l = state.K, state.omega, state.l
    n = K.phase_dim
    J = symplectic_form(n // 2)
    _, DF, dlam = model.family_with_derivatives(K.centers, state.lam, evaluate_grid(K))
    DK = derivative(K)
    DKt = np.swapaxes(DK, -1, -2)

    gram = DKt @ DK
    eig = np.linalg.eigvalsh(gram)
    if np.min(eig[..., 0]) <= 1e-14 * max(float(np.max(eig)), 1e-300):
        raise DegenerateEmbedding("DKᵀDK is singular on the grid")
    N = np.linalg.inv(gram)
    P = DK @ N

    Bc, Pc = state.bundle.Bc, state.bundle.Pc
    if Bc.shape[-1] != 2 * l:
        raise ValueError(f"center bundle has rank {Bc.shape[-1]}, expected {2 * l}")
    Bct = np.swapaxes(Bc, -1, -2)
    Jc = Bct @ J @ Bc
    Jc = 0.5 * (Jc - np.swapaxes(Jc, -1, -2))
    Y = Bc @ np.linalg.solve(Jc, Bct @ P)
    PcDK = Pc @ DK
    Mt = np.concatenate([PcDK, Y], axis=-1)

    # explicit inverse of M̃ᵀJM̃ ≈ [[0, I], [−I, G]] is [[G, −I], [I, 0]]
    eye = np.broadcast_to(np.eye(l), DK.shape[:-2] + (l, l))
    Gy = np.swapaxes(Y, -1, -2) @ J @ Y
    MJM_inv = np.block([[Gy, -eye], [eye, np.zeros_like(Gy)]])
    MJM = np.swapaxes(Mt, -1, -2) @ J @ Mt
    inverse_defect = float(np.abs(MJM @ MJM_inv - np.eye(2 * l)).max())
    Linv = MJM_inv @ np.swapaxes(Mt, -1, -2) @ J

    DFY_t = grid_shift(DF @ Y, -omega, l)
    A = grid_shift(Linv[..., :l, :] @ DFY_t, omega, l)
    dlam_t = grid_shift(dlam, -omega, l)
    H = grid_shift(Linv @ (Pc @ dlam_t), omega, l)
    L = DKt @ J @ DK

    mismatch = float(np.max(np.linalg.norm(DK - PcDK, axis=(-2, -1))
                            / np.linalg.norm(DK, axis=(-2, -1))))
    return CenterGeometry(DF, dlam, DK, N, P, Jc, Mt, Linv, A, H, L, mismatch, inverse_defect)


def _check_average(avg: NDArray, floor: float, exc, name: str) -> float:
    """Smallest singular value check; returns |avg^(-1)|₂."""
    sv = np.linalg.svd(np.atleast_2d(avg), compute_uv=False)
    if sv.size == 0 or sv[-1] < floor:
        raise exc(f"avg({name}) is singular (smallest singular value {sv[-1] if sv.size else 0:.3e})")
    return float(1.0 / sv[-1])


# ─────────────────────────────────────────────
# CENTER SOLVE
# ─────────────────────────────────────────────
def solve_center(state: KamState, geometry: CenterGeometry, Ec_target: GridField,
                 solver: SolverConfig) -> Tuple[GridField, NDArray]:
    """
    Center correction and counterterm.

    `Ec_target` is Π^c(θ+ω)E(θ) sampled at the fiber θ+ω, i.e. the
    center part of grid_shift(E, −ω).
    """
    omega, l = state.omega, state.l
    g = geometry
    n_centers = g.H.shape[-1]
    if n_centers != l:
        raise ValueError(f"{n_centers} counterterm entries for a torus on T^{l}")

    p1 = grid_shift(-np.einsum("...ij,...j->...i", g.Linv, Ec_target), omega, l)
    avgA, avgQ = g.averages()
    _check_average(avgQ, solver.parameter_floor, DegenerateParameter, "Q")
    _check_average(avgA, solver.twist_floor, DegenerateTwist, "A")

    Lam = np.linalg.solve(avgQ, average(p1[..., l:], l))
    T = p1 - np.einsum("...ij,j->...i", g.H, Lam)
    T1, T2 = T[..., :l], T[..., l:]

    # v₂(θ+ω) − v₂(θ) = −T₂; avg(T₂) vanishes by the choice of Λ up to roundoff
    rhs2 = -(T2 - average(T2, l))
    v2 = solve_difference_grid(rhs2, omega, l, math.inf, solver.divisor_floor)
    Av2 = np.einsum("...ij,...j->...i", g.A, v2)
    v2 = v2 + np.linalg.solve(avgA, average(T1, l) - average(Av2, l))

    # v₁(θ+ω) − v₁(θ) = A v₂ − T₁, zero-average gauge
    rhs1 = np.einsum("...ij,...j->...i", g.A, v2) - T1
    leftover = float(np.abs(average(rhs1, l)).max())
    if leftover > solver.zero_avg_tol * max(1.0, float(np.abs(rhs1).max())):
        logger.debug("center solve: average of v₁ equation %.3e removed", leftover)
    v1 = solve_difference_grid(rhs1 - average(rhs1, l), omega, l, math.inf, solver.divisor_floor)

    v = np.concatenate([v1, v2], axis=-1)
    delta_c = np.einsum("...ij,...j->...i", g.Mt, v)
    return delta_c, Lam


# ─────────────────────────────────────────────
# HYPERBOLIC SOLVE
# ─────────────────────────────────────────────
def _neumann(first: GridField, step, tol: float, max_terms: int, label: str) -> Tuple[GridField, int]:
    total = first.copy()
    term = first
    norms = [float(np.abs(first).max())]
    for k in range(1, max_terms + 1):
        if norms[-1] < tol:
            return total, k
        term = step(term)
        norms.append(float(np.abs(term).max()))
        if not np.isfinite(norms[-1]) or (k > 10 and norms[-1] > norms[-11]):
            raise SeriesDivergence(f"{label} series grows (term {k}: {norms[-1]:.3e})")
        total = total + term
    raise SeriesDivergence(f"{label} series did not reach {tol:.1e} in {max_terms} terms")


def solve_hyperbolic(state: KamState, cocycle: Cocycle, Rs_target: GridField, Ru_target: GridField,
                     solver: SolverConfig) -> Tuple[GridField, GridField]:
    """
    Δ^s, Δ^u from the stable/unstable parts of E + ∂λF·Λ, sampled at the
    fiber θ+ω (`R*_target`).

        Δ^s(θ) = Σ_k  DF(θ−ω)···DF(θ−kω) R^s(θ−kω)
        Δ^u(θ) = −Σ_k DF(θ)^(-1)···DF(θ+kω)^(-1) R^u(θ+(k+1)ω)
    """
    bundle = state.bundle
    omega, l = state.omega, state.l
    rates = bundle.rates
    if rates is not None and (rates.mu1 >= 1.0 or rates.mu2 >= 1.0):
        raise SeriesDivergence(f"hyperbolic rates ({rates.mu1:.3f}, {rates.mu2:.3f}) are not contracting")
    apply = lambda P, x: np.einsum("...ij,...j->...i", P, x)  # noqa: E731

    behind = cocycle.behind
    stable_step = lambda t: apply(bundle.Ps, apply(behind, grid_shift(t, -omega, l)))  # noqa: E731
    delta_s, ns = _neumann(Rs_target, stable_step, solver.series_tol, solver.series_max_terms, "stable")

    J = symplectic_form(cocycle.phase_dim // 2)
    DF_inv = -J @ np.swapaxes(cocycle.forward, -1, -2) @ J
    unstable_step = lambda t: apply(bundle.Pu, apply(DF_inv, grid_shift(t, omega, l)))  # noqa: E731
    first = unstable_step(-Ru_target)
    delta_u, nu = _neumann(first, unstable_step, solver.series_tol, solver.series_max_terms, "unstable")
    logger.debug("hyperbolic series: %d stable terms, %d unstable terms", ns, nu)
    return delta_s, delta_u


# ─────────────────────────────────────────────
# LINEARIZED OPERATOR
# ─────────────────────────────────────────────
def linearized_residual(geometry: CenterGeometry, state: KamState, delta: GridField, Lam: NDArray,
                        E: GridField) -> float:
    """sup |DF Δ(θ) − Δ(θ+ω) + ∂λF Λ + E(θ)| on the grid."""
    res = (np.einsum("...ij,...j->...i", geometry.DF, delta)
           - grid_shift(delta, state.omega, state.l)
           + np.einsum("...ij,j->...i", geometry.dlam, Lam) + E)
    return float(np.abs(res).max())


def reducibility_defect(model: LatticeModel, state: KamState,
                        geometry: Optional[CenterGeometry] = None) -> Tuple[float, float]:
    """
    sup ∥DF M̃(θ) − M̃(θ+ω) [[I, A], [0, I]]∥ and the sup of the lower
    blocks of M̃⁺(θ+ω) DF M̃(θ) minus (0, I).
    """
    g = geometry or center_geometry(model, state)
    l = state.l
    upper = np.concatenate([np.broadcast_to(np.eye(l), g.A.shape), g.A], axis=-1)
    lower = np.concatenate([np.zeros_like(g.A), np.broadcast_to(np.eye(l), g.A.shape)], axis=-1)
    block = np.concatenate([upper, lower], axis=-2)
    Mt_next = grid_shift(g.Mt, state.omega, l)
    defect = _sup_norm(g.DF @ g.Mt - Mt_next @ block)
    reduced = grid_shift(g.Linv @ grid_shift(g.DF @ g.Mt, -state.omega, l), state.omega, l)
    lower_gap = float(np.abs(reduced[..., l:, :] - lower).max())
    return defect, lower_gap


# ─────────────────────────────────────────────
# NEWTON STEP
# ─────────────────────────────────────────────
def refresh_bundle(model: LatticeModel, state: KamState, solver: SolverConfig,
                   with_rates: bool = False) -> KamState:
    """Invariant splitting at (K, λ), starting from the current bundle (or the uncoupled one)."""
    bundle = state.bundle or initial_splitting(model, state.K)
    cocycle = build_cocycle(model, state.K, state.lam, state.omega)
    bundle = graph_refine(bundle, cocycle, solver.graph_tol, bundle.npower,
                          solver.graph_max_sweeps, solver.npower_max)
    if with_rates:
        bundle = replace(bundle, rates=measure_rates(bundle, cocycle, solver.rate_nmax))
    return replace(state, bundle=bundle)


def newton_correction(model: LatticeModel, state: KamState, solver: SolverConfig,
                      E: Optional[GridField] = None):
    """(Δ, Λ, geometry) for the current state without applying them."""
    if E is None:
        E, _ = invariance_error(model, state)
    omega, l = state.omega, state.l
    cocycle = build_cocycle(model, state.K, state.lam, omega)
    geometry = center_geometry(model, state)
    bundle = state.bundle

    E_t = grid_shift(E, -omega, l)
    Ec_t = np.einsum("...ij,...j->...i", bundle.Pc, E_t)
    delta_c, Lam = solve_center(state, geometry, Ec_t, solver)

    R_t = E_t + np.einsum("...ij,j->...i", grid_shift(geometry.dlam, -omega, l), Lam)
    Rs_t = np.einsum("...ij,...j->...i", bundle.Ps, R_t)
    Ru_t = np.einsum("...ij,...j->...i", bundle.Pu, R_t)
    delta_s, delta_u = solve_hyperbolic(state, cocycle, Rs_t, Ru_t, solver)
    return delta_s + delta_c + delta_u, Lam, geometry


def newton_step(model: LatticeModel, state: KamState, solver: SolverConfig,
                E: Optional[GridField] = None) -> KamState:
    """K′ = K + Δ^s + Δ^c + Δ^u, λ′ = λ + Λ, bundle refreshed around K′."""
    if state.bundle is None:
        state = refresh_bundle(model, state, solver)

    delta, Lam, geometry = newton_correction(model, state, solver, E)
    if geometry.center_mismatch > solver.center_threshold:
        logger.debug("DK leaves E^c by %.3e (relative)", geometry.center_mismatch)
    K_new = like(state.K, evaluate_grid(state.K) + delta)
    moved = replace(state, K=K_new, lam=state.lam + Lam)
    return refresh_bundle(model, moved, solver)


def _record(model: LatticeModel, state: KamState, norms: ErrorNorms, iteration: int) -> StepRecord:
    extra = {}
    try:
        g = center_geometry(model, state)
        avgA, avgQ = g.averages()
        extra = dict(isotropy=float(np.abs(g.L).max()), N_norm=_sup_norm(g.N),
                     avgA_inv=float(np.linalg.norm(np.linalg.inv(avgA), 2)),
                     avgQ_inv=float(np.linalg.norm(np.linalg.inv(avgQ), 2)))
    except (KamError, np.linalg.LinAlgError, ValueError) as exc:
        logger.debug("diagnostics unavailable at iteration %d: %s", iteration, exc)
    rates = state.bundle.rates if state.bundle is not None else None
    if rates is not None:
        extra.update(mu1=rates.mu1, mu2=rates.mu2, mu3=rates.mu3)
    if state.bundle is not None:
        extra["defect"] = state.bundle.defect
    return StepRecord(iteration, norms.sup, norms.weighted, float(np.abs(state.lam).max(initial=0.0)),
                      **extra)


def solve(model: LatticeModel, state: KamState, solver: SolverConfig,
          gamma: Optional[DecayFunction] = None, tol: Optional[float] = None,
          max_iter: Optional[int] = None) -> KamState:
    """
    Iterate newton_step until the error drops below tol. Stops with
    NoConvergence after `max_increases` consecutive steps that grow the
    error by 1/stall_ratio, after as many consecutive steps that fail to
    cut it by stall_ratio (a truncation floor above tol), or when the
    iteration budget runs out.
    The exception carries the history and the best state seen.
    """
    tol = solver.tol if tol is None else tol
    max_iter = solver.max_iter if max_iter is None else max_iter
    if math.isinf(tol):
        return state
    if solver.stop_norm == "weighted" and gamma is None:
        raise ValueError("the weighted stopping norm needs a decay function")
    assert_nonresonant(state.omega, state.K.grid_size, state.l, solver.divisor_floor)

    if state.bundle is None:
        state = refresh_bundle(model, state, solver)
    history: List[StepRecord] = []
    best, best_err = state, math.inf
    prev_err, increases, stalls = math.inf, 0, 0
    for it in range(max_iter + 1):
        E, norms = invariance_error(model, state, gamma, solver.rho)
        record = _record(model, state, norms, it)
        history.append(record)
        err = norms.weighted if solver.stop_norm == "weighted" else norms.sup
        logger.debug("newton %d: |E|=%.3e |E|w=%.3e |λ|=%.3e", it, norms.sup, norms.weighted,
                     record.lam_norm)
        if not np.isfinite(err):
            raise NoConvergence("error is not finite", history, best)
        if err < tol:
            state = refresh_bundle(model, state, solver, with_rates=True)
            history[-1] = replace(record, mu1=state.bundle.rates.mu1, mu2=state.bundle.rates.mu2,
                                  mu3=state.bundle.rates.mu3)
            logger.info("converged in %d iterations: |E|=%.3e |λ|=%.3e", it, norms.sup, record.lam_norm)
            return replace(state, history=tuple(history))
        if err < best_err:
            best, best_err = replace(state, history=tuple(history)), err
        increases = increases + 1 if err > prev_err / solver.stall_ratio else 0
        stalls = stalls + 1 if err > solver.stall_ratio * prev_err else 0
        prev_err = err
        if increases >= solver.max_increases:
            raise NoConvergence(f"error increased {increases} times in a row", history, best)
        if stalls >= solver.max_increases:
            raise NoConvergence(f"error stagnated at {err:.3e} for {stalls} iterations "
                                f"(tol {tol:.1e})", history, best)
        if it == max_iter:
            break
        state = newton_step(model, state, solver, E)
    raise NoConvergence(f"no convergence to {tol:.1e} in {max_iter} iterations", history, best)


# ─────────────────────────────────────────────
# DIRECT NEWTON ORACLE
# ─────────────────────────────────────────────
def _shift_matrix(M: int, shift: float) -> NDArray:
    """Real M×M matrix of f ↦ f(· + shift) on the grid (band-limited interpolation)."""
    k = np.rint(np.fft.fftfreq(M, d=1.0 / M))
    F = np.fft.fft(np.eye(M), axis=0)
    return np.real(np.fft.ifft(np.exp(2j * np.pi * k * shift)[:, None] * F, axis=0))


def direct_newton_oracle(model: LatticeModel, state: KamState, max_unknowns: int = 4000,
                         E: Optional[GridField] = None) -> Tuple[GridField, NDArray]:
    """
    Dense solve of DF Δ(θ) − Δ(θ+ω) + ∂λF Λ = −E(θ) on the whole grid
    with l gauge rows avg(PᵀΔ) = 0.
    """
    K, omega, l = state.K, state.omega, state.l
    n = K.phase_dim
    grid = (K.grid_size,) * l
    G = int(np.prod(grid))
    C = K.centers.shape[0]
    if G * n + C > max_unknowns:
        raise ValueError(f"{G * n + C} unknowns exceed the oracle limit {max_unknowns}")
    if E is None:
        E, _ = invariance_error(model, state)
    _, DF, dlam = model.family_with_derivatives(K.centers, state.lam, evaluate_grid(K))
    DK = derivative(K)
    P = DK @ np.linalg.inv(np.swapaxes(DK, -1, -2) @ DK)

    shift = np.ones((1, 1))
    for w in omega:
        shift = np.kron(shift, _shift_matrix(K.grid_size, float(w)))
    system = -np.kron(shift, np.eye(n))
    DF_flat = DF.reshape(G, n, n)
    for j in range(G):
        system[j * n:(j + 1) * n, j * n:(j + 1) * n] += DF_flat[j]
    system = np.concatenate([system, dlam.reshape(G * n, C)], axis=1)
    gauge = np.concatenate([np.swapaxes(P.reshape(G, n, l), 1, 2).transpose(1, 0, 2).reshape(l, G * n) / G,
                            np.zeros((l, C))], axis=1)
    lhs = np.concatenate([system, gauge], axis=0)
    rhs = np.concatenate([-E.reshape(G * n), np.zeros(l)])
    sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return sol[:G * n].reshape(grid + (n,)), sol[G * n:]


# ─────────────────────────────────────────────
# INITIAL GUESS FROM THE SINGLE-SITE FLOW
# ─────────────────────────────────────────────
def _rotation_numbers(single: LatticeModel, amplitudes: NDArray, n: int) -> NDArray:
    """Rotation numbers of the one-site Verlet map for a batch of starting amplitudes."""
    qstar = single.elliptic_point
    x = np.stack([qstar + amplitudes, np.zeros_like(amplitudes)], axis=-1)
    angle = np.zeros_like(amplitudes)
    prev = np.arctan2(x[:, 1], x[:, 0] - qstar)
    for _ in range(n):
        x = single.map_F(x)
        cur = np.arctan2(x[:, 1], x[:, 0] - qstar)
        angle += np.angle(np.exp(1j * (cur - prev)))
        prev = cur
    return -angle / (2 * math.pi * n)


def libration_amplitude(model: LatticeModel, omega: float, iterates: int = 4000,
                        batch: int = 32, rounds: int = 4) -> float:
    """Amplitude a of the libration (q* + a, 0) whose Verlet rotation number is ω."""
    single = model.with_epsilon(0.0).on_sites(model.sites[:1])
    a_hi = 0.98 * single.elliptic_point
    grid = np.linspace(1e-3 * a_hi, a_hi, batch)
    rot = _rotation_numbers(single, grid, iterates)
    if not (rot.min() <= omega <= rot.max()):
        raise FrequencyNotAttainable(
            f"ω = {omega:.6g} outside the libration range [{rot.min():.6g}, {rot.max():.6g}]")
    for _ in range(rounds):
        # rotation number decreases with amplitude
        j = int(np.clip(np.searchsorted(-rot, -omega), 1, grid.size - 1))
        lo, hi = grid[j - 1], grid[j]
        grid = np.linspace(lo, hi, batch)
        rot = _rotation_numbers(single, grid, iterates)
    j = int(np.clip(np.searchsorted(-rot, -omega), 1, grid.size - 1))
    a0, a1, r0, r1 = grid[j - 1], grid[j], rot[j - 1], rot[j]
    return float(a0 + (omega - r0) * (a1 - a0) / (r1 - r0)) if r1 != r0 else float(a0)


def single_site_guess(model: LatticeModel, omega: float, center, kmax: int, dealias: float = 2.0,
                      iterates: int = 4000, samples: Optional[int] = None) -> TorusEmbedding:
    """
    Libration of one site sampled along the continuous flow over one
    period, at the amplitude whose map rotation number is ω. Every other
    site rests at the background fixed point.
    """
    single = model.with_epsilon(0.0).on_sites(model.sites[:1])
    amp = libration_amplitude(model, omega, iterates)
    qstar = single.elliptic_point
    x0 = np.array([qstar + amp, 0.0])

    def upward(t, x):
        return x[1]
    upward.direction = 1.0
    upward.terminal = True

    horizon = 100.0 * single.cfg.step * single.cfg.substeps / omega
    sol = solve_ivp(single.vector_field, (0.0, horizon), x0, method="DOP853",
                    rtol=single.cfg.flow_rtol, atol=single.cfg.flow_atol, events=upward)
    if sol.status != 1 or not sol.t_events[0].size:
        raise IntegrationError("no turning point found along the libration")
    period = 2.0 * float(sol.t_events[0][0])

    M = samples or default_grid_size(kmax, dealias)
    orbit = single.flow(x0, period, t_eval=np.arange(M) * period / M)
    S = model.S
    c = int(model.index_of(center)[0])
    values = np.zeros((M, 2 * S))
    values[:, c] = orbit[:, 0]
    values[:, S + c] = orbit[:, 1]
    centers = np.atleast_2d(np.asarray(center)).reshape(1, -1)
    K = from_grid(values, kmax, sites=model.sites, centers=centers)
    logger.info("single-site guess: ω=%.6g amplitude=%.6f flow period=%.6f", omega, amp, period)
    return K
