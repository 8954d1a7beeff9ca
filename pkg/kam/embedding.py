"""
kam/embedding.py
────────────────────────────────────────────────────────────
TORUS EMBEDDINGS: K: T^l → phase space of a lattice window, stored as
Fourier coefficients.

Layout conventions used everywhere in the package:

  * coefficients: complex array of shape (2·kmax+1,)*l + (2S,), entry
    [k_1 + kmax, ..., k_l + kmax, c] is the mode k of component c.
  * components: [q_1..q_S, p_1..p_S] in the order of `sites`.
  * grid fields: real arrays whose first l axes are the collocation grid
    (M points per angle, θ_j = j/M), trailing axes are whatever the field
    carries (a phase vector, a matrix, ...).

Angles are measured in turns, so T_ω(θ) = θ + ω and the mode k carries
the phase e^(2πi k·θ).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize

from kam.errors import AliasingError

logger = logging.getLogger(__name__)

GridField = NDArray  # grid axes first, payload axes last


def default_grid_size(kmax: int, dealias: float = 2.0) -> int:
    """Odd grid size M = 2·ceil(dealias·kmax) + 1, so no Nyquist mode exists."""
    return 2 * int(math.ceil(max(dealias, 1.0) * kmax)) + 1


# ─────────────────────────────────────────────
# EMBEDDING TYPE
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class TorusEmbedding:
    coeffs: NDArray
    sites: NDArray
    centers: NDArray
    kmax: int
    grid_size: int
    winding: NDArray = field(default=None)

    def __post_init__(self):
        l = self.coeffs.ndim - 1
        if self.winding is None:
            object.__setattr__(self, "winding", np.zeros((self.coeffs.shape[-1], l), dtype=int))
        if self.coeffs.shape[-1] != 2 * self.sites.shape[0]:
            raise ValueError("coefficient components do not match the site list")
        if any(n != 2 * self.kmax + 1 for n in self.coeffs.shape[:-1]):
            raise ValueError("coefficient array does not match kmax")

    @property
    def l(self) -> int:
        return self.coeffs.ndim - 1

    @property
    def n_sites(self) -> int:
        return self.sites.shape[0]

    @property
    def phase_dim(self) -> int:
        return self.coeffs.shape[-1]

    @property
    def dim(self) -> int:
        return self.sites.shape[1]

    def site_index(self, site) -> int:
        """Row of `site` in the window (accepts an int for N=1 or a tuple)."""
        target = np.atleast_1d(np.asarray(site))
        hits = np.nonzero((self.sites == target).all(axis=1))[0]
        if hits.size == 0:
            raise KeyError(f"site {site} is not in the window")
        return int(hits[0])

    def center_indices(self) -> NDArray:
        return np.array([self.site_index(c) for c in self.centers], dtype=int)

    def with_coeffs(self, coeffs: NDArray) -> "TorusEmbedding":
        return replace(self, coeffs=coeffs)


def zero(sites: NDArray, centers: NDArray, kmax: int, l: int = 1,
         dealias: float = 2.0) -> TorusEmbedding:
    """The fixed-point embedding K ≡ 0."""
    sites = np.asarray(sites).reshape(len(sites), -1)
    coeffs = np.zeros((2 * kmax + 1,) * l + (2 * sites.shape[0],), dtype=complex)
    return TorusEmbedding(coeffs, sites, np.asarray(centers).reshape(-1, sites.shape[1]),
                          kmax, default_grid_size(kmax, dealias))


# ─────────────────────────────────────────────
# MODE / GRID HELPERS
# ─────────────────────────────────────────────
def mode_axes(kmax: int, l: int) -> Tuple[NDArray, ...]:
    """Integer mode index of each coefficient axis, broadcastable over (2kmax+1,)*l."""
    k = np.arange(-kmax, kmax + 1)
    return tuple(k.reshape((1,) * a + (-1,) + (1,) * (l - a - 1)) for a in range(l))


def grid_axes(M: int, l: int) -> Tuple[NDArray, ...]:
    """Collocation angles θ_j = j/M per axis, broadcastable over (M,)*l."""
    t = np.arange(M) / M
    return tuple(t.reshape((1,) * a + (-1,) + (1,) * (l - a - 1)) for a in range(l))


def fft_modes(M: int, l: int) -> Tuple[NDArray, ...]:
    """Signed integer frequency of every FFT bin, broadcastable over (M,)*l."""
    k = np.rint(np.fft.fftfreq(M, d=1.0 / M)).astype(int)
    return tuple(k.reshape((1,) * a + (-1,) + (1,) * (l - a - 1)) for a in range(l))


def _trailing(arr: NDArray, l: int) -> Tuple[int, ...]:
    return (1,) * (arr.ndim - l)


def to_modes(values: GridField, l: int) -> NDArray:
    """Normalized DFT over the grid axes: hat_k = M^-l Σ_j f(θ_j) e^(-2πik·θ_j)."""
    M = values.shape[0]
    return np.fft.fftn(values, axes=tuple(range(l))) / M ** l


def from_modes(hat: NDArray, l: int) -> GridField:
    M = hat.shape[0]
    return np.fft.ifftn(hat, axes=tuple(range(l))).real * M ** l


def average(values: GridField, l: int) -> NDArray:
    """k = 0 mode of a grid field (exact for band-limited data)."""
    return values.mean(axis=tuple(range(l)))


def grid_shift(values: GridField, shift, l: int) -> GridField:
    """f(θ) ↦ f(θ + shift) for a smooth periodic grid field, through its Fourier modes."""
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    if not np.any(shift):
        return values
    M = values.shape[0]
    hat = to_modes(values, l)
    phase = sum(k * s for k, s in zip(fft_modes(M, l), shift))
    hat *= np.exp(2j * np.pi * phase).reshape(phase.shape + _trailing(values, l))
    return from_modes(hat, l)


def _placement(kmax: int, M: int, l: int):
    if M < 2 * kmax + 1:
        raise AliasingError(f"grid size {M} cannot carry kmax={kmax}")
    idx = np.arange(-kmax, kmax + 1) % M
    return np.ix_(*([idx] * l))


def _winding_field(K: TorusEmbedding, M: int) -> GridField:
    theta = grid_axes(M, K.l)
    out = np.zeros((M,) * K.l + (K.phase_dim,))
    for a in range(K.l):
        out += theta[a][..., None] * K.winding[:, a]
    return out


# ─────────────────────────────────────────────
# TRANSFORMS
# ─────────────────────────────────────────────
def evaluate_grid(K: TorusEmbedding, grid_size: Optional[int] = None) -> GridField:
    """K on the collocation grid, shape (M,)*l + (2S,), winding part included."""
    M = grid_size or K.grid_size
    hat = np.zeros((M,) * K.l + (K.phase_dim,), dtype=complex)
    hat[_placement(K.kmax, M, K.l)] = K.coeffs
    values = from_modes(hat, K.l)
    if np.any(K.winding):
        values = values + _winding_field(K, M)
    return values


def from_grid(values: GridField, kmax: int, *, sites: NDArray, centers: NDArray,
              winding: Optional[NDArray] = None) -> TorusEmbedding:
    """Forward transform with truncation to |k|_∞ ≤ kmax."""
    l = values.ndim - 1
    M = values.shape[0]
    w = np.zeros((values.shape[-1], l), dtype=int) if winding is None else np.asarray(winding)
    periodic = values
    if np.any(w):
        theta = grid_axes(M, l)
        periodic = values - sum(theta[a][..., None] * w[:, a] for a in range(l))
    coeffs = to_modes(periodic, l)[_placement(kmax, M, l)]
    return TorusEmbedding(np.ascontiguousarray(coeffs), np.asarray(sites), np.asarray(centers),
                          kmax, M, w)


def like(K: TorusEmbedding, values: GridField) -> TorusEmbedding:
    """from_grid with the window, centers, band and winding of K."""
    return from_grid(values, K.kmax, sites=K.sites, centers=K.centers, winding=K.winding)


def rotate(K: TorusEmbedding, omega) -> TorusEmbedding:
    """K ∘ T_ω: mode k picks up e^(2πi k·ω); the winding part adds winding·ω to k = 0."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    phase = sum(k * w for k, w in zip(mode_axes(K.kmax, K.l), omega))
    coeffs = K.coeffs * np.exp(2j * np.pi * phase)[..., None]
    if np.any(K.winding):
        zero_mode = (K.kmax,) * K.l
        coeffs[zero_mode] += K.winding @ omega
    return K.with_coeffs(coeffs)


def derivative_coeffs(K: TorusEmbedding) -> NDArray:
    """Fourier coefficients of the periodic part of DK, shape (...modes, 2S, l)."""
    ks = mode_axes(K.kmax, K.l)
    return np.stack([2j * np.pi * ks[a][..., None] * K.coeffs for a in range(K.l)], axis=-1)


def derivative(K: TorusEmbedding, grid_size: Optional[int] = None) -> GridField:
    """DK on the grid, shape (M,)*l + (2S, l): spectral part plus winding columns."""
    M = grid_size or K.grid_size
    dc = derivative_coeffs(K)
    hat = np.zeros((M,) * K.l + dc.shape[-2:], dtype=complex)
    hat[_placement(K.kmax, M, K.l)] = dc
    return from_modes(hat, K.l) + K.winding.astype(float)


# ─────────────────────────────────────────────
# NORMS
# ─────────────────────────────────────────────
def _mode_weight(kmax: int, l: int, rho: float) -> NDArray:
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    k1 = sum(np.abs(k) for k in mode_axes(kmax, l))
    return np.exp(2 * np.pi * rho * k1)


def site_majorants(K: TorusEmbedding, rho: float) -> NDArray:
    """Σ_k |K̂_{i,k}|₂ e^(2πρ|k|₁) for every site i, shape (S,)."""
    S = K.n_sites
    per_mode = np.sqrt(np.abs(K.coeffs[..., :S]) ** 2 + np.abs(K.coeffs[..., S:]) ** 2)
    weight = _mode_weight(K.kmax, K.l, rho)[..., None]
    return (per_mode * weight).reshape(-1, S).sum(axis=0)


def majorant_norm(K: TorusEmbedding, site, rho: float) -> float:
    """ℓ¹ Fourier majorant of (q_i, p_i); dominates the sup on the strip D_ρ."""
    return float(site_majorants(K, rho)[K.site_index(site)])


def tail_fraction(K: TorusEmbedding, band: int) -> float:
    """Share of the ℓ¹ coefficient mass carried by the top `band` shells |k|_∞ > kmax − band."""
    if band < 0:
        raise ValueError("band must be nonnegative")
    kinf = np.maximum.reduce([np.abs(k) for k in np.broadcast_arrays(*mode_axes(K.kmax, K.l))])
    mass = np.abs(K.coeffs).sum(axis=-1)
    total = mass.sum()
    if total == 0:
        return 0.0
    return float(mass[kinf > K.kmax - band].sum() / total)


def is_real(K: TorusEmbedding, tol: float = 1e-12) -> bool:
    """Reality constraint coefficient(−k) = conj(coefficient(k))."""
    flipped = np.flip(K.coeffs, axis=tuple(range(K.l)))
    scale = max(np.abs(K.coeffs).max(initial=0.0), 1.0)
    return bool(np.abs(flipped - np.conj(K.coeffs)).max(initial=0.0) <= tol * scale)


# ─────────────────────────────────────────────
# RESHAPING
# ─────────────────────────────────────────────
def truncate(K: TorusEmbedding, kmax: int, dealias: float = 2.0) -> TorusEmbedding:
    """Change the band (zero padding or truncation) and resize the grid."""
    old = K.kmax
    shape = (2 * kmax + 1,) * K.l + (K.phase_dim,)
    coeffs = np.zeros(shape, dtype=complex)
    keep = min(old, kmax)
    src = tuple(slice(old - keep, old + keep + 1) for _ in range(K.l))
    dst = tuple(slice(kmax - keep, kmax + keep + 1) for _ in range(K.l))
    coeffs[dst] = K.coeffs[src]
    return replace(K, coeffs=coeffs, kmax=kmax, grid_size=default_grid_size(kmax, dealias))


def extend(K: TorusEmbedding, extra: int) -> TorusEmbedding:
    """View a torus on T^l as a torus on T^(l+extra), constant in the new angles."""
    shape = (2 * K.kmax + 1,) * (K.l + extra) + (K.phase_dim,)
    coeffs = np.zeros(shape, dtype=complex)
    coeffs[(Ellipsis,) + (K.kmax,) * extra + (slice(None),)] = K.coeffs
    winding = np.concatenate([K.winding, np.zeros((K.phase_dim, extra), dtype=int)], axis=1)
    return replace(K, coeffs=coeffs, winding=winding)


def resite(K: TorusEmbedding, sites: NDArray) -> TorusEmbedding:
    """Re-embed K on another window; missing sites rest at the fixed point."""
    sites = np.asarray(sites)
    S_old, S_new = K.n_sites, sites.shape[0]
    coeffs = np.zeros(K.coeffs.shape[:-1] + (2 * S_new,), dtype=complex)
    winding = np.zeros((2 * S_new, K.l), dtype=int)
    lookup = {tuple(s): j for j, s in enumerate(sites.tolist())}
    for i, s in enumerate(K.sites.tolist()):
        j = lookup.get(tuple(s))
        if j is None:
            if np.any(K.coeffs[..., [i, S_old + i]]):
                raise ValueError(f"site {s} carries data but is missing from the new window")
            continue
        coeffs[..., j] = K.coeffs[..., i]
        coeffs[..., S_new + j] = K.coeffs[..., S_old + i]
        winding[[j, S_new + j]] = K.winding[[i, S_old + i]]
    return replace(K, coeffs=coeffs, sites=sites, winding=winding)


def circle(sites: NDArray, center, amplitude: float, kmax: int, offset: float = 0.0,
           dealias: float = 2.0) -> TorusEmbedding:
    """q_c = offset + A cos 2πθ, p_c = −A sin 2πθ at one site; every other site at rest."""
    K = zero(sites, np.atleast_2d(center), kmax, 1, dealias)
    c = K.site_index(center)
    coeffs = K.coeffs.copy()
    S = K.n_sites
    coeffs[kmax, c] = offset
    coeffs[kmax + 1, c] = coeffs[kmax - 1, c] = amplitude / 2
    coeffs[kmax + 1, S + c] = 1j * amplitude / 2
    coeffs[kmax - 1, S + c] = -1j * amplitude / 2
    return K.with_coeffs(coeffs)


def align_phase(K1: TorusEmbedding, K2: TorusEmbedding) -> Tuple[NDArray, float]:
    """
    Phase τ minimizing ∥K1∘T_τ − K2∥ (Parseval, i.e. grid L²), and the grid
    sup distance at that τ.
    """
    if K1.coeffs.shape != K2.coeffs.shape:
        raise ValueError("embeddings must share band and window")
    ks = mode_axes(K1.kmax, K1.l)

    def distance(tau: NDArray) -> float:
        phase = sum(k * t for k, t in zip(ks, tau))
        diff = K1.coeffs * np.exp(2j * np.pi * phase)[..., None] - K2.coeffs
        return float(np.sum(np.abs(diff) ** 2))

    # coarse scan, then local refinement
    n = 64 if K1.l == 1 else 16
    starts = np.stack(np.meshgrid(*([np.arange(n) / n] * K1.l), indexing="ij"), axis=-1).reshape(-1, K1.l)
    best = min(starts, key=distance)
    result = minimize(distance, best, method="Nelder-Mead",
                      options={"xatol": 1e-10, "fatol": 1e-30, "maxiter": 4000})
    tau = np.asarray(result.x, dtype=float)

    # Newton polish on the analytic gradient/Hessian of the L² distance
    for _ in range(5):
        phase = sum(k * t for k, t in zip(ks, tau))
        u = K1.coeffs * np.exp(2j * np.pi * phase)[..., None]
        d = u - K2.coeffs
        du = [2j * np.pi * ks[a][..., None] * u for a in range(K1.l)]
        grad = np.array([2 * np.real(np.sum(np.conj(d) * du[a])) for a in range(K1.l)])
        hess = np.array([[2 * np.real(np.sum(np.conj(du[a]) * du[b]
                                             + np.conj(d) * 2j * np.pi * ks[b][..., None] * du[a]))
                          for b in range(K1.l)] for a in range(K1.l)])
        if not np.all(np.isfinite(hess)) or abs(np.linalg.det(hess)) < 1e-300:
            break
        trial = tau - np.linalg.solve(hess, grad)
        if distance(trial) > distance(tau):
            break
        tau = trial
    tau = np.mod(tau, 1.0)
    aligned = rotate(K1, tau)
    sup = float(np.abs(evaluate_grid(aligned) - evaluate_grid(K2)).max())
    logger.debug("align_phase: tau=%s sup distance %.3e", tau, sup)
    return tau, sup
