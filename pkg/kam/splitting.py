"""
kam/splitting.py
────────────────────────────────────────────────────────────
INVARIANT SPLITTINGS: stable / center / unstable bundles along a torus.

    DF(K(θ)) E^σ_θ = E^σ_{θ+ω},     σ ∈ {s, c, u}

The bundles are stored as grid fields of orthonormal bases and of the
(oblique) projections onto each summand. Bases are only defined up to a
change of basis at every point, so anything that must be shifted in θ
(graphs, projections) is handled in its basis-free ambient form.

Graph transform: a bundle A that attracts under push-forward by a cocycle
C (C maps the fiber at θ to the fiber at θ+s) is the fixed point of

    U ↦ Π_B C (I + U) [Π_A C (I + U)|_A]^(-1)        (evaluated at θ+s)

where U: A → B is the graph over a reference splitting A ⊕ B. E^u and
E^cu attract forward (s = ω), E^s and E^cs attract backward (s = −ω, C
the inverse cocycle); E^c = E^cu ∩ E^cs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from kam.embedding import GridField, TorusEmbedding, evaluate_grid, grid_shift, rotate
from kam.errors import ContractionFailure, NonHyperbolic
from kam.lattice_model import LatticeModel, symplectic_form

logger = logging.getLogger(__name__)


# ─────────────────────────────────────────────
# TYPES
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class Rates:
    mu1: float
    mu2: float
    mu3: float
    C_h: float

    @property
    def dominated(self) -> bool:
        return self.mu1 * self.mu3 < 1.0 and self.mu2 * self.mu3 < 1.0


@dataclass(frozen=True)
class Cocycle:
    """
    DF_λ along the torus: `forward` is DF(K(θ)), mapping fiber θ to θ+ω;
    `behind` is DF(K(θ−ω)), mapping fiber θ−ω to θ.
    """

    forward: GridField
    behind: GridField
    omega: NDArray
    l: int

    @property
    def phase_dim(self) -> int:
        return self.forward.shape[-1]

    def backward(self) -> GridField:
        """DF(K(θ−ω))^(-1): fiber θ → θ−ω, from the symplectic identity M^(-1) = −J Mᵀ J."""
        J = symplectic_form(self.phase_dim // 2)
        return -J @ np.swapaxes(self.behind, -1, -2) @ J


@dataclass(frozen=True)
class SplittingBundle:
    omega: NDArray
    l: int
    Bs: GridField
    Bc: GridField
    Bu: GridField
    Ps: GridField
    Pc: GridField
    Pu: GridField
    rates: Optional[Rates] = None
    defect: float = float("nan")
    npower: int = 1
    sweeps: int = 0

    @property
    def ranks(self) -> Tuple[int, int, int]:
        return self.Bs.shape[-1], self.Bc.shape[-1], self.Bu.shape[-1]

    @property
    def grid_size(self) -> int:
        return self.Ps.shape[0]

    def summary(self) -> Dict[str, float]:
        out = {"rank_s": self.ranks[0], "rank_c": self.ranks[1], "rank_u": self.ranks[2],
               "defect": self.defect, "npower": self.npower}
        if self.rates is not None:
            out.update(mu1=self.rates.mu1, mu2=self.rates.mu2, mu3=self.rates.mu3, C_h=self.rates.C_h)
        return out


def _projections(Bs: NDArray, Bc: NDArray, Bu: NDArray) -> Tuple[NDArray, NDArray, NDArray]:
    B = np.concatenate([Bs, Bc, Bu], axis=-1)
    Binv = np.linalg.inv(B)
    rs, rc = Bs.shape[-1], Bc.shape[-1]
    Ps = Bs @ Binv[..., :rs, :]
    Pc = Bc @ Binv[..., rs:rs + rc, :]
    Pu = Bu @ Binv[..., rs + rc:, :]
    return Ps, Pc, Pu


def bundle_from_bases(omega, l: int, Bs: NDArray, Bc: NDArray, Bu: NDArray, **extra) -> SplittingBundle:
    Ps, Pc, Pu = _projections(Bs, Bc, Bu)
    return SplittingBundle(np.atleast_1d(np.asarray(omega, dtype=float)), l, Bs, Bc, Bu, Ps, Pc, Pu, **extra)


def _range_basis(P: NDArray, rank: int) -> NDArray:
    """Orthonormal basis of range(P) at every grid point."""
    if rank == 0:
        return np.zeros(P.shape[:-1] + (0,))
    U, _, _ = np.linalg.svd(P)
    return U[..., :rank]


def _orthonormalize(X: NDArray) -> NDArray:
    if X.shape[-1] == 0:
        return X
    Q, _ = np.linalg.qr(X)
    return Q


# ─────────────────────────────────────────────
# COCYCLE
# ─────────────────────────────────────────────
def build_cocycle(model: LatticeModel, K: TorusEmbedding, lam: NDArray, omega) -> Cocycle:
    """DF_λ at K(θ) and at K(θ−ω), both evaluated exactly on the grid."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    x = evaluate_grid(K)
    x_behind = evaluate_grid(rotate(K, -omega))
    _, forward, _ = model.family_with_derivatives(K.centers, lam, x)
    _, behind, _ = model.family_with_derivatives(K.centers, lam, x_behind)
    return Cocycle(forward, behind, omega, K.l)


def _power(C: GridField, s: NDArray, n: int, l: int) -> GridField:
    """n-step product C(θ+(n−1)s)···C(θ), mapping fiber θ to θ+n·s."""
    out = C
    for j in range(1, n):
        out = grid_shift(C, j * s, l) @ out
    return out


# ─────────────────────────────────────────────
# INITIAL SPLITTING
# ─────────────────────────────────────────────
def initial_splitting(model: LatticeModel, K: TorusEmbedding) -> SplittingBundle:
    """
    Uncoupled splitting: quiescent sites use the stable/unstable eigenvectors
    of the single-site Verlet matrix at the fixed point; every center site
    contributes its whole (q, p) plane to E^c.
    """
    _, vals, vecs = model.onsite_multipliers()
    if not (abs(vals[0]) < 1.0 < abs(vals[1])):
        raise NonHyperbolic(f"single-site multipliers {vals} are not hyperbolic")
    S = model.S
    n = 2 * S
    centers = set(model.index_of(K.centers).tolist())
    stable, center, unstable = [], [], []
    for i in range(S):
        e_q, e_p = np.zeros(n), np.zeros(n)
        e_q[i], e_p[S + i] = 1.0, 1.0
        if i in centers:
            center += [e_q, e_p]
        else:
            vs = vecs[0, 0] * e_q + vecs[1, 0] * e_p
            vu = vecs[0, 1] * e_q + vecs[1, 1] * e_p
            stable.append(vs / np.linalg.norm(vs))
            unstable.append(vu / np.linalg.norm(vu))
    grid = (K.grid_size,) * K.l

    def tile(cols):
        mat = np.stack(cols, axis=-1) if cols else np.zeros((n, 0))
        return np.broadcast_to(mat, grid + mat.shape).copy()

    omega = np.zeros(K.l)
    bundle = bundle_from_bases(omega, K.l, tile(stable), tile(center), tile(unstable))
    logger.debug("initial splitting ranks %s", bundle.ranks)
    return bundle


# ─────────────────────────────────────────────
# GRAPH TRANSFORM
# ─────────────────────────────────────────────
def _attract(PA: NDArray, rank: int, C: NDArray, s: NDArray, l: int,
             tol: float, max_sweeps: int) -> Tuple[NDArray, int, list]:
    """
    Fixed point of the push-forward graph transform for the bundle
    attracted by C (fiber θ → θ+s). Returns an orthonormal basis field
    of the refined bundle, the sweep count and the update history.
    """
    if rank == 0:
        return np.zeros(PA.shape[:-1] + (0,)), 0, []
    n = PA.shape[-1]
    eye = np.eye(n)
    PA_s = grid_shift(PA, s, l)
    QA = _range_basis(PA, rank)
    QA_s = _range_basis(PA_s, rank)
    coords = np.swapaxes(QA_s, -1, -2) @ PA_s  # A-coordinates at θ+s
    PB_s = eye - PA_s

    U = np.zeros_like(PA)
    history = []
    for sweep in range(1, max_sweeps + 1):
        Y = C @ (QA + U @ QA)
        c = coords @ Y
        U_at = PB_s @ Y @ np.linalg.solve(c, coords)
        U_new = grid_shift(U_at, -s, l)
        delta = float(np.abs(U_new - U).max())
        U = U_new
        history.append(delta)
        if delta < tol:
            return _orthonormalize(QA + U @ QA), sweep, history
        if not np.isfinite(delta) or (sweep > 8 and delta > 10 * history[0] + 1.0):
            break
        if sweep > 20 and delta > 0.999 * history[-2]:
            break
    raise ContractionFailure(f"graph transform did not contract (last update {history[-1]:.3e})",
                             history)


def graph_refine(bundle: SplittingBundle, cocycle: Cocycle, tol: float = 1e-12,
                 npower: int = 1, max_sweeps: int = 400, npower_max: int = 8) -> SplittingBundle:
    """
    Invariant splitting near `bundle`. On contraction failure the one-step
    cocycle is replaced by its N-step product, N doubling up to npower_max.
    """
    l, omega = cocycle.l, cocycle.omega
    rs, rc, ru = bundle.ranks
    back = cocycle.backward()
    N = max(1, npower)
    while True:
        try:
            Cf = _power(cocycle.forward, omega, N, l)
            Cb = _power(back, -omega, N, l)
            s_f, s_b = N * omega, -N * omega
            Qu, n1, _ = _attract(bundle.Pu, ru, Cf, s_f, l, tol, max_sweeps)
            Qcu, n2, _ = _attract(bundle.Pc + bundle.Pu, rc + ru, Cf, s_f, l, tol, max_sweeps)
            Qs, n3, _ = _attract(bundle.Ps, rs, Cb, s_b, l, tol, max_sweeps)
            Qcs, n4, _ = _attract(bundle.Ps + bundle.Pc, rs + rc, Cb, s_b, l, tol, max_sweeps)
            break
        except ContractionFailure:
            if 2 * N > npower_max:
                raise
            N *= 2
            logger.warning("graph transform stalled; escalating to the %d-step cocycle", N)

    Bc = _intersect(Qcu, Qcs, rc)
    refined = bundle_from_bases(omega, l, Qs, Bc, Qu, npower=N, sweeps=max(n1, n2, n3, n4),
                                rates=bundle.rates)
    defect = max(invariance_defect(refined, cocycle).values(), default=0.0)
    logger.debug("graph_refine: sweeps=%d N=%d defect=%.3e", refined.sweeps, N, defect)
    return replace(refined, defect=defect)


def _intersect(Qcu: NDArray, Qcs: NDArray, rc: int) -> NDArray:
    """Orthonormal basis of E^cu ∩ E^cs from the top singular vectors of Qcuᵀ Qcs."""
    if rc == 0:
        return np.zeros(Qcu.shape[:-1] + (0,))
    M = np.swapaxes(Qcu, -1, -2) @ Qcs
    U, sv, _ = np.linalg.svd(M)
    if np.min(sv[..., rc - 1]) < 1.0 - 1e-6:
        logger.warning("center intersection is ill-defined (singular value %.3e)",
                       float(np.min(sv[..., rc - 1])))
    return _orthonormalize(Qcu @ U[..., :rc])


# ─────────────────────────────────────────────
# MEASUREMENTS
# ─────────────────────────────────────────────
def project(bundle: SplittingBundle, G: GridField) -> Tuple[GridField, GridField, GridField]:
    """(Π^s G, Π^c G, Π^u G) pointwise."""
    return tuple(np.einsum("...ij,...j->...i", P, G) for P in (bundle.Ps, bundle.Pc, bundle.Pu))


def invariance_defect(bundle: SplittingBundle, cocycle: Cocycle) -> Dict[str, float]:
    """sup_θ ∥(I − Π^σ_{θ+ω}) DF B^σ_θ∥ / ∥DF B^σ_θ∥ for every nonempty σ."""
    out = {}
    n = cocycle.phase_dim
    eye = np.eye(n)
    for name, B, P in (("s", bundle.Bs, bundle.Ps), ("c", bundle.Bc, bundle.Pc), ("u", bundle.Bu, bundle.Pu)):
        if B.shape[-1] == 0:
            continue
        image = cocycle.forward @ B
        P_next = grid_shift(P, cocycle.omega, cocycle.l)
        leak = np.linalg.norm((eye - P_next) @ image, ord=2, axis=(-2, -1))
        size = np.linalg.norm(image, ord=2, axis=(-2, -1))
        out[name] = float(np.max(leak / size))
    return out


def symplectic_orthogonality(bundle: SplittingBundle) -> float:
    """sup of |Ω(u, v)| for u ∈ E^s, v ∈ E^s ⊕ E^c and for u ∈ E^u, v ∈ E^u ⊕ E^c."""
    n = bundle.Ps.shape[-1]
    J = symplectic_form(n // 2)
    worst = 0.0
    for B, other in ((bundle.Bs, bundle.Bs), (bundle.Bu, bundle.Bu)):
        if B.shape[-1] == 0:
            continue
        partner = np.concatenate([other, bundle.Bc], axis=-1)
        omega_vals = np.swapaxes(B, -1, -2) @ J @ partner
        worst = max(worst, float(np.abs(omega_vals).max()))
    return worst


def _growth(C: NDArray, B: NDArray, s: NDArray, l: int, nmax: int) -> NDArray:
    """sup_θ ∥C_n(θ) B(θ)∥ for n = 1..nmax."""
    norms = np.empty(nmax)
    X = B
    for n in range(nmax):
        X = grid_shift(C, n * s, l) @ X
        norms[n] = np.linalg.norm(X, ord=2, axis=(-2, -1)).max()
    return norms


def _fit_rate(norms: NDArray) -> float:
    n = np.arange(1, norms.size + 1)
    slope, _ = np.polyfit(n, np.log(np.maximum(norms, 1e-300)), 1)
    return float(np.exp(slope))


def measure_rates(bundle: SplittingBundle, cocycle: Cocycle, nmax: int = 40) -> Rates:
    """
    Geometric rates of the cocycle on each sub-bundle:
    μ₁ forward on E^s, μ₂ backward on E^u, μ₃ both ways on E^c.
    C_h is the largest overshoot norm_n / μ^n seen.
    """
    l, omega = cocycle.l, cocycle.omega
    back = cocycle.backward()
    fits = {}
    overshoot = 1.0
    for name, C, B, s in (("mu1", cocycle.forward, bundle.Bs, omega),
                          ("mu2", back, bundle.Bu, -omega),
                          ("mu3f", cocycle.forward, bundle.Bc, omega),
                          ("mu3b", back, bundle.Bc, -omega)):
        if B.shape[-1] == 0:
            fits[name] = 0.0
            continue
        norms = _growth(C, B, s, l, nmax)
        mu = _fit_rate(norms)
        fits[name] = mu
        overshoot = max(overshoot, float(np.max(norms / mu ** np.arange(1, nmax + 1))))
    rates = Rates(fits["mu1"], fits["mu2"], max(fits["mu3f"], fits["mu3b"]), overshoot)
    logger.debug("measured rates %s", rates)
    return rates
