"""
kam/decay_spaces.py
────────────────────────────────────────────────────────────
DECAY SPACES: weights on lattice displacements and the norms built on them.

A decay function Γ(i) = a|i|^(-α) e^(-rate·|i|) (|i| the 1-norm, Γ(0) = a)
must satisfy two axioms:

    Σ_j Γ(j) ≤ 1                              (summability)
    Σ_j Γ(i − j) Γ(j − k) ≤ Γ(i − k)          (convolution)

With those, operators whose blocks decay like Γ form a Banach algebra
under  ∥A∥_Γ = sup_ij |A_ij| Γ(i − j)^(-1),  and vector fields localized
around a list of centers are measured with  sup_i min_k Γ^(-1)(i − c_k)·|x_i|.

Infinite sums over Z^N are truncated to a radius and closed with an
analytic tail bound, so every reported sum is an upper bound.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import comb

from kam.embedding import TorusEmbedding, site_majorants
from kam.errors import WindowMismatch

logger = logging.getLogger(__name__)

# Γ values below this are treated as underflowed when forming ratios.
_TINY = 1e-280


# ─────────────────────────────────────────────
# LATTICE HELPERS
# ─────────────────────────────────────────────
def one_norm(i, dim: int) -> NDArray:
    """1-norm of a displacement: plain integers for N=1, trailing axis of length N otherwise."""
    arr = np.asarray(i)
    if dim == 1:
        return np.abs(arr)
    return np.abs(arr).sum(axis=-1)


def strip(disp: NDArray, dim: int) -> NDArray:
    """Drop the trailing site axis for N=1 so displacements read as integers."""
    return disp[..., 0] if dim == 1 else disp


def shell_count(dim: int, n: int) -> int:
    """Number of points of Z^dim with 1-norm exactly n."""
    if n == 0:
        return 1
    return int(sum(2 ** k * comb(dim, k, exact=True) * comb(n - 1, k - 1, exact=True)
                   for k in range(1, min(dim, n) + 1)))


def box_sites(radius: int, dim: int) -> NDArray:
    """Sites of the box [-radius, radius]^dim in lexicographic order, shape (S, dim)."""
    axes = [np.arange(-radius, radius + 1)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _power_tail(alpha: float, dim: int, radius: int) -> float:
    """Upper bound of Σ_{|j|>R} |j|^(-α) using S(N,n) ≤ N·2^N·n^(N-1)."""
    if alpha <= dim:
        return math.inf
    return dim * 2 ** dim * radius ** (dim - alpha) / (alpha - dim)


# ─────────────────────────────────────────────
# DECAY FUNCTION
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class DecayFunction:
    """Γ(i) = prefactor·|i|^(-alpha)·exp(-rate·|i|), Γ(0) = prefactor."""

    alpha: float
    rate: float
    prefactor: float
    dim: int = 1

    def __post_init__(self):
        if self.prefactor <= 0:
            raise ValueError("prefactor must be positive")
        if self.rate < 0:
            raise ValueError("rate must be nonnegative")
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")

    def __call__(self, i) -> NDArray:
        return evaluate(self, i)

    def inverse(self, i) -> NDArray:
        """Γ^(-1)(i), computed in the log domain (inf once Γ underflows)."""
        d = one_norm(i, self.dim).astype(float)
        with np.errstate(divide="ignore", over="ignore"):
            log_w = self.alpha * np.log(np.where(d > 0, d, 1.0)) + self.rate * d
            return np.exp(log_w - math.log(self.prefactor))

    def with_rate(self, rate: float) -> "DecayFunction":
        """Member of the ordered family Γ_β with the same (alpha, prefactor)."""
        return replace(self, rate=rate)

    def tail_bound(self, radius: int) -> float:
        """Upper bound of Σ_{|j|>radius} Γ(j)."""
        n, dim, alpha = radius, self.dim, self.alpha
        decay = math.exp(-self.rate * (n + 1))
        if alpha > dim:
            return self.prefactor * _power_tail(alpha, dim, n) * decay
        if self.rate > 0 and alpha >= dim - 1:
            # n^(N-1-α) ≤ R^(N-1-α) for n > R; geometric sum of the exponentials
            return (self.prefactor * dim * 2 ** dim * n ** (dim - 1 - alpha)
                    * decay / (1.0 - math.exp(-self.rate)))
        return math.inf


def evaluate(gamma: DecayFunction, i) -> NDArray:
    """Γ(i); returns prefactor at i = 0."""
    return radial(gamma, one_norm(i, gamma.dim))


def radial(gamma: DecayFunction, n) -> NDArray:
    """Γ as a function of the 1-norm n."""
    d = np.asarray(n, dtype=float)
    safe = np.where(d > 0, d, 1.0)
    with np.errstate(under="ignore"):
        value = gamma.prefactor * safe ** (-gamma.alpha) * np.exp(-gamma.rate * d)
    return np.where(d > 0, value, gamma.prefactor)


def lattice_zeta(alpha: float, dim: int, radius: int) -> float:
    """K_{N,α} = Σ_{j≠0} |j|^(-α): shells up to radius plus the integral tail."""
    if alpha <= dim:
        raise ValueError(f"Σ|j|^(-α) diverges for alpha={alpha} <= dim={dim}")
    shells = sum(shell_count(dim, n) * float(n) ** (-alpha) for n in range(1, radius + 1))
    return shells + _power_tail(alpha, dim, radius)


def max_prefactor(alpha: float, rate: float = 0.0, dim: int = 1,
                  radius: int = 1000, paired: bool = False) -> float:
    """
    Largest prefactor a with a ≤ 1/(2^(α+1)·K_{N,α} + 2).

    With paired=True the result is min(a0(α), a0(2α)), the safe value for a
    whole ordered family. The exponential factor is submultiplicative, so
    the rate does not enter the bound.
    """
    if alpha <= dim:
        raise ValueError(f"alpha={alpha} must exceed the lattice dimension {dim}")
    if rate < 0:
        raise ValueError("rate must be nonnegative")

    def a0(s: float) -> float:
        return 1.0 / (2.0 ** (s + 1) * lattice_zeta(s, dim, radius) + 2.0)

    value = min(a0(alpha), a0(2 * alpha)) if paired else a0(alpha)
    logger.debug("max_prefactor(alpha=%s, dim=%s) = %.6g", alpha, dim, value)
    return value


# ─────────────────────────────────────────────
# AXIOM CHECK
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class AxiomReport:
    sum_total: float
    worst_convolution_ratio: float
    worst_displacement: tuple
    passed: bool


def _sample_displacements(dim: int, radius: int) -> NDArray:
    if dim == 1:
        return np.arange(0, radius + 1)[:, None]
    near = box_sites(min(radius, 6), dim)
    near = near[one_norm(near, dim) <= min(radius, 6)]
    far = []
    for n in range(0, radius + 1):
        far.append([n] + [0] * (dim - 1))
        far.append([n // 2] * dim)
        far.append([n - n // 3] + [n // 3] + [0] * (dim - 2))
    samples = np.unique(np.vstack([near, np.asarray(far)]), axis=0)
    return samples[one_norm(samples, dim) <= radius]


def check_axioms(gamma: DecayFunction, radius: int) -> AxiomReport:
    """
    Verify both decay-function axioms on displacements with |i − k| ≤ radius.

    The convolution sum Σ_j Γ(d − j)Γ(j) is summed directly (no FFT) over
    the box |j|_∞ ≤ 2·radius; the remainder is bounded by Γ(L − |d|)·tail(L).
    For N ≥ 2 a symmetric sample of displacements replaces the full scan.
    """
    if radius < 10:
        raise ValueError("radius must be at least 10")
    dim = gamma.dim

    shells = sum(shell_count(dim, n) * float(radial(gamma, n)) for n in range(0, radius + 1))
    sum_total = shells + gamma.tail_bound(radius)

    half = 2 * radius
    box = box_sites(half, dim)
    g_box = evaluate(gamma, strip(box, dim))
    tail = gamma.tail_bound(half)

    worst, worst_d = 0.0, tuple([0] * dim)
    for d in _sample_displacements(dim, radius):
        norm_d = int(np.abs(d).sum())
        g_d = float(radial(gamma, norm_d))
        if g_d < _TINY:
            continue
        g_shift = evaluate(gamma, strip(d - box, dim))
        outside = float(radial(gamma, half - norm_d))
        total = float(np.dot(g_box, g_shift)) + outside * tail
        ratio = total / g_d
        if ratio > worst:
            worst, worst_d = ratio, tuple(int(v) for v in np.atleast_1d(d))

    passed = bool(sum_total <= 1.0 and worst <= 1.0)
    logger.info("check_axioms: sum=%.6g worst_ratio=%.6g at %s -> %s",
                sum_total, worst, worst_d, "pass" if passed else "fail")
    return AxiomReport(float(sum_total), float(worst), worst_d, passed)


def ordered_family_ratios(gamma: DecayFunction, beta_prime: float, radius: int) -> NDArray:
    """Γ_β(n)/Γ_β'(n) for n = 1..radius (β = gamma.rate > β')."""
    if beta_prime >= gamma.rate:
        raise ValueError("beta_prime must be smaller than gamma.rate")
    n = np.arange(1, radius + 1)
    if gamma.dim > 1:
        n = np.stack([n] + [np.zeros_like(n)] * (gamma.dim - 1), axis=-1)
    return evaluate(gamma, n) / evaluate(gamma.with_rate(beta_prime), n)


def center_weight_sum(gamma: DecayFunction, centers: NDArray, sites: NDArray) -> tuple[float, float]:
    """
    (max_i Σ_k Γ(i − c_k) / max_k Γ(i − c_k), bound 2/(1 − e^(-rate))).

    For spatially non-resonant centers the first number stays below the bound.
    """
    if gamma.rate <= 0:
        raise ValueError("the bound needs a positive rate")
    disp = sites[:, None, :] - np.asarray(centers)[None, :, :]
    weights = evaluate(gamma, strip(disp, gamma.dim))
    ratio = float(np.max(weights.sum(axis=1) / weights.max(axis=1)))
    return ratio, 2.0 / (1.0 - math.exp(-gamma.rate))


# ─────────────────────────────────────────────
# DECAY OPERATORS
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class DecayOperator:
    """
    Block operator over a lattice window.

    blocks[i, j] is the 2×2 (q, p) block coupling site j into site i, in
    the order of `window` (shape (S, dim)).
    """

    window: NDArray
    blocks: NDArray
    _norms: Dict[DecayFunction, float] = field(default_factory=dict, compare=False, repr=False)

    @property
    def size(self) -> int:
        return self.window.shape[0]

    @classmethod
    def from_dense(cls, matrix: NDArray, window: NDArray) -> "DecayOperator":
        """Split a (2S, 2S) matrix with layout [q(S), p(S)] into site blocks."""
        s = window.shape[0]
        m = np.asarray(matrix).reshape(2, s, 2, s)
        return cls(np.asarray(window), np.ascontiguousarray(m.transpose(1, 3, 0, 2)))

    @classmethod
    def identity(cls, window: NDArray) -> "DecayOperator":
        s = window.shape[0]
        blocks = np.zeros((s, s, 2, 2))
        blocks[np.arange(s), np.arange(s)] = np.eye(2)
        return cls(np.asarray(window), blocks)

    def to_dense(self) -> NDArray:
        s = self.size
        return self.blocks.transpose(2, 0, 3, 1).reshape(2 * s, 2 * s)

    def block_norms(self) -> NDArray:
        """Operator 2-norm of every block, shape (S, S)."""
        if not self.blocks.size:
            return np.zeros((self.size, self.size))
        return np.linalg.norm(self.blocks, ord=2, axis=(-2, -1))

    def displacements(self) -> NDArray:
        return self.window[:, None, :] - self.window[None, :, :]

    def norm(self, gamma: DecayFunction) -> float:
        if gamma not in self._norms:
            self._norms[gamma] = operator_norm(self, gamma)
        return self._norms[gamma]


def _check_same_window(a: DecayOperator, b: DecayOperator) -> None:
    if a.window.shape != b.window.shape or not np.array_equal(a.window, b.window):
        raise WindowMismatch("operators live on different windows")


def operator_norm(A: DecayOperator, gamma: DecayFunction) -> float:
    """sup_ij |A_ij| Γ(i − j)^(-1) with 2-norm blocks."""
    disp = A.displacements()
    inv = gamma.inverse(strip(disp, gamma.dim))
    bn = A.block_norms()
    with np.errstate(invalid="ignore"):
        weighted = np.where(bn > 0, bn * inv, 0.0)
    return float(weighted.max()) if weighted.size else 0.0


def compose(A: DecayOperator, B: DecayOperator) -> DecayOperator:
    """Blockwise product (AB)_ik = Σ_j A_ij B_jk over the shared window."""
    _check_same_window(A, B)
    return DecayOperator(A.window, np.einsum("ijab,jkbc->ikac", A.blocks, B.blocks))


def add(A: DecayOperator, B: DecayOperator) -> DecayOperator:
    _check_same_window(A, B)
    return DecayOperator(A.window, A.blocks + B.blocks)


def localized_norm(A: DecayOperator, centers: NDArray, gamma: DecayFunction) -> float:
    """∥A∥_{c,Γ} = max(∥A∥_Γ, sup_ij min_k |A_ij| Γ^(-1)(i − c_k))."""
    centers = np.asarray(centers)
    if centers.size == 0:
        raise ValueError("empty center list")
    disp = A.window[:, None, :] - centers[None, :, :]
    row_weight = gamma.inverse(strip(disp, gamma.dim)).min(axis=1)
    bn = A.block_norms()
    with np.errstate(invalid="ignore"):
        local = np.where(bn > 0, bn * row_weight[:, None], 0.0)
    return max(operator_norm(A, gamma), float(local.max()) if local.size else 0.0)


def random_decay_operator(window: NDArray, gamma: DecayFunction,
                          rng: np.random.Generator, scale: float = 1.0) -> DecayOperator:
    """Random operator with |A_ij| ≤ scale·Γ(i − j) (test and benchmark helper)."""
    s = window.shape[0]
    raw = rng.standard_normal((s, s, 2, 2))
    raw /= np.maximum(np.linalg.norm(raw, ord=2, axis=(-2, -1)), 1e-300)[..., None, None]
    disp = window[:, None, :] - window[None, :, :]
    env = evaluate(gamma, strip(disp, gamma.dim))
    amp = rng.uniform(0.0, scale, size=(s, s))
    return DecayOperator(window, raw * (amp * env)[..., None, None])


# ─────────────────────────────────────────────
# EMBEDDING NORM
# ─────────────────────────────────────────────
def embedding_norm(K: TorusEmbedding, centers: Sequence, gamma: DecayFunction, rho: float) -> float:
    """∥K∥_{ρ,c,Γ} = sup_i min_j Γ^(-1)(i − c_j)·∥K_i∥_ρ (majorant per site)."""
    centers = np.asarray(list(centers) if not isinstance(centers, np.ndarray) else centers)
    if centers.size == 0:
        raise ValueError("empty center list")
    centers = centers.reshape(-1, gamma.dim)
    majorants = site_majorants(K, rho)
    disp = K.sites[:, None, :] - centers[None, :, :]
    weight = gamma.inverse(strip(disp, gamma.dim)).min(axis=1)
    with np.errstate(invalid="ignore"):
        values = np.where(majorants > 0, majorants * weight, 0.0)
    return float(values.max()) if values.size else 0.0
