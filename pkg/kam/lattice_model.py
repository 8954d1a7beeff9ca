"""
kam/lattice_model.py
────────────────────────────────────────────────────────────
LATTICE MODEL: the Klein–Gordon lattice and its symplectic map.

    H = Σ_i  p_i²/2 + W(q_i)  +  ε Σ_i Σ_k V_k(q_i − q_{i+k})

    ṗ_i = −W'(q_i) − ε Σ_k [V_k'(q_i − q_{i+k}) − V_k'(q_{i−k} − q_i)]

F is the `substeps`-fold kick–drift–kick Verlet step of size `step`, so it
is exactly symplectic. Sites outside the window are frozen at (0, 0).

Every map/Jacobian routine is batched: x may carry any leading axes
(grid points) in front of the phase axis of length 2S.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from numpy.typing import NDArray
from scipy.integrate import solve_ivp

from kam.decay_spaces import DecayFunction, DecayOperator, box_sites, radial
from kam.errors import DegenerateParameter, IntegrationError, NonHyperbolic
from schemas import ModelConfig

logger = logging.getLogger(__name__)


# ─────────────────────────────────────────────
# POTENTIALS
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class Potential:
    """A scalar potential with its first two derivatives."""

    value: Callable[[NDArray], NDArray]
    d1: Callable[[NDArray], NDArray]
    d2: Callable[[NDArray], NDArray]


def _polynomial(coeffs: Sequence[float]) -> Potential:
    P = Polynomial(list(coeffs))
    dP, ddP = P.deriv(1), P.deriv(2)
    return Potential(P, dP, ddP)


def onsite_potential(cfg: ModelConfig) -> Potential:
    if cfg.onsite == "pendulum":
        return Potential(lambda q: np.cos(q) - 1.0, lambda q: -np.sin(q), lambda q: -np.cos(q))
    return _polynomial(cfg.onsite)


def coupling_potentials(cfg: ModelConfig) -> List[Tuple[int, Potential]]:
    """(range k, V_k) pairs; the default is V_1(s) = γ s²/2."""
    if not cfg.coupling_potentials:
        return [(1, _polynomial([0.0, 0.0, cfg.gamma / 2.0]))]
    out = []
    for spec in cfg.coupling_potentials:
        # even polynomial: c2 s² + c4 s⁴ + ...
        coeffs = [0.0]
        for c in spec.coefficients:
            coeffs += [0.0, c]
        out.append((spec.range, _polynomial(coeffs)))
    return out


# ─────────────────────────────────────────────
# MODEL
# ─────────────────────────────────────────────
class LatticeModel:
    """
    The lattice Hamiltonian restricted to a window of sites.

    Build one with `LatticeModel.from_config(cfg)` (box window of radius
    cfg.window_radius) or move it to another window with `on_sites`.
    """

    def __init__(self, cfg: ModelConfig, sites: Optional[NDArray] = None):
        self.cfg = cfg
        self.sites = np.asarray(box_sites(cfg.window_radius, cfg.dim) if sites is None else sites)
        self.S = self.sites.shape[0]
        self.W = onsite_potential(cfg)
        self.V = coupling_potentials(cfg)
        self._lookup = {tuple(s): j for j, s in enumerate(self.sites.tolist())}
        self._bonds = self._build_bonds()

    @classmethod
    def from_config(cls, cfg: ModelConfig, gamma: Optional[DecayFunction] = None) -> "LatticeModel":
        """Box window of radius cfg.window_radius; with gamma, checks |V_k''(0)| ≤ C_V Γ(k)."""
        model = cls(cfg)
        if gamma is not None:
            bound = model.interaction_bound(gamma)
            if not math.isfinite(bound):
                raise ValueError("coupling potentials are not dominated by the decay function")
            if cfg.interaction_limit is not None and bound > cfg.interaction_limit:
                raise ValueError(f"interaction bound C_V = {bound:.3e} exceeds "
                                 f"interaction_limit = {cfg.interaction_limit:.3e}")
            logger.debug("interaction bound C_V = %.3e", bound)
        return model

    def on_sites(self, sites: NDArray) -> "LatticeModel":
        return LatticeModel(self.cfg, sites)

    def with_epsilon(self, epsilon: float) -> "LatticeModel":
        return LatticeModel(self.cfg.model_copy(update={"epsilon": epsilon}), self.sites)

    def __repr__(self) -> str:
        return (f"LatticeModel(sites={self.S}, eps={self.cfg.epsilon}, h={self.cfg.step}, "
                f"substeps={self.cfg.substeps}, counterterm={self.cfg.counterterm!r})")

    # ── window bookkeeping ─────────────────────────────────────
    def _build_bonds(self):
        """Per coupling potential and axis: neighbor index of i+d and i−d (S = outside)."""
        bonds = []
        for k, pot in self.V:
            for axis in range(self.cfg.dim):
                d = np.zeros(self.cfg.dim, dtype=int)
                d[axis] = k
                plus = np.array([self._lookup.get(tuple(s + d), self.S) for s in self.sites])
                minus = np.array([self._lookup.get(tuple(s - d), self.S) for s in self.sites])
                bonds.append((pot, plus, minus))
        return bonds

    def index_of(self, sites) -> NDArray:
        sites = np.asarray(sites).reshape(-1, self.cfg.dim)
        try:
            return np.array([self._lookup[tuple(s)] for s in sites.tolist()], dtype=int)
        except KeyError as exc:
            raise ValueError(f"site {exc.args[0]} is outside the window") from exc

    # ── forces ─────────────────────────────────────────────────
    def force(self, q: NDArray) -> NDArray:
        """ṗ; out-of-window neighbors read as 0."""
        f = -self.W.d1(q)
        eps = self.cfg.epsilon
        if eps == 0.0:
            return f
        q_ext = np.concatenate([q, np.zeros(q.shape[:-1] + (1,))], axis=-1)
        for pot, plus, minus in self._bonds:
            f = f - eps * (pot.d1(q - q_ext[..., plus]) - pot.d1(q_ext[..., minus] - q))
        return f

    def _hessian_apply(self, q: NDArray, T: NDArray) -> NDArray:
        """(∂force/∂q)·T for T of shape (..., S, m)."""
        out = -self.W.d2(q)[..., None] * T
        eps = self.cfg.epsilon
        if eps == 0.0:
            return out
        q_ext = np.concatenate([q, np.zeros(q.shape[:-1] + (1,))], axis=-1)
        T_ext = np.concatenate([T, np.zeros(T.shape[:-2] + (1, T.shape[-1]))], axis=-2)
        for pot, plus, minus in self._bonds:
            a = pot.d2(q - q_ext[..., plus])[..., None]
            b = pot.d2(q_ext[..., minus] - q)[..., None]
            out = out - eps * (a * (T - T_ext[..., plus, :]) + b * (T - T_ext[..., minus, :]))
        return out

    def energy(self, x: NDArray) -> NDArray:
        """Hamiltonian of the continuous flow, bonds to frozen sites included."""
        q, p = x[..., :self.S], x[..., self.S:]
        e = 0.5 * (p ** 2).sum(axis=-1) + self.W.value(q).sum(axis=-1)
        if self.cfg.epsilon == 0.0:
            return e
        q_ext = np.concatenate([q, np.zeros(q.shape[:-1] + (1,))], axis=-1)
        for pot, plus, minus in self._bonds:
            inner = pot.value(q - q_ext[..., plus]).sum(axis=-1)
            dangling = np.where(minus == self.S, pot.value(-q), 0.0).sum(axis=-1)
            e = e + self.cfg.epsilon * (inner + dangling)
        return e

    # ── the map ────────────────────────────────────────────────
    def map_F(self, x: NDArray) -> NDArray:
        h = self.cfg.step
        q, p = x[..., :self.S].copy(), x[..., self.S:].copy()
        f = self.force(q)
        for _ in range(self.cfg.substeps):
            p = p + 0.5 * h * f
            q = q + h * p
            f = self.force(q)
            p = p + 0.5 * h * f
        return np.concatenate([q, p], axis=-1)

    def map_and_jacobian(self, x: NDArray) -> Tuple[NDArray, NDArray]:
        """F(x) and the exact chain-rule Jacobian DF(x), shape (..., 2S, 2S)."""
        h, S = self.cfg.step, self.S
        q, p = x[..., :S].copy(), x[..., S:].copy()
        eye = np.eye(2 * S)
        Tq = np.broadcast_to(eye[:S], x.shape[:-1] + (S, 2 * S)).copy()
        Tp = np.broadcast_to(eye[S:], x.shape[:-1] + (S, 2 * S)).copy()
        f = self.force(q)
        for _ in range(self.cfg.substeps):
            p = p + 0.5 * h * f
            Tp = Tp + 0.5 * h * self._hessian_apply(q, Tq)
            q = q + h * p
            Tq = Tq + h * Tp
            f = self.force(q)
            p = p + 0.5 * h * f
            Tp = Tp + 0.5 * h * self._hessian_apply(q, Tq)
        return np.concatenate([q, p], axis=-1), np.concatenate([Tq, Tp], axis=-2)

    def jacobian(self, x: NDArray) -> NDArray:
        return self.map_and_jacobian(x)[1]

    def dF(self, x: NDArray) -> DecayOperator:
        """DF at a single phase point as a DecayOperator on the window."""
        return DecayOperator.from_dense(self.jacobian(np.asarray(x)), self.sites)

    def jacobian_decay(self, x: NDArray, gamma: DecayFunction) -> float:
        """Measured C in |(DF)_ij| ≤ C·Γ(i − j)."""
        return self.dF(x).norm(gamma)

    # ── parameter family F_λ ───────────────────────────────────
    def counterterm(self, centers, lam: NDArray, y: NDArray):
        """
        G_λ(y) at the centers, with its 2×2 center blocks DG and ∂G_λ/∂λ(y).

        "momentum": p_c += λ.
        "action":   (q_c − q*, p_c) scaled by sqrt(1 + 2λ/r²), i.e. I ↦ I + λ
                    for the action I = r²/2 around the elliptic point q*.

        Returns (G_λ(y), blocks of shape (..., C, 2, 2), dλ of shape (..., 2S, C)).
        """
        idx = self.index_of(centers)
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (idx.size,):
            raise ValueError(f"expected {idx.size} counterterm entries, got {lam.shape}")
        S = self.S
        lead = y.shape[:-1]
        out = y.copy()
        blocks = np.broadcast_to(np.eye(2), lead + (idx.size, 2, 2)).copy()
        dlam = np.zeros(lead + (2 * S, idx.size))

        if self.cfg.counterterm == "momentum":
            for j, c in enumerate(idx):
                out[..., S + c] += lam[j]
                dlam[..., S + c, j] = 1.0
            return out, blocks, dlam

        qstar = self.elliptic_point
        for j, c in enumerate(idx):
            u = y[..., c] - qstar
            v = y[..., S + c]
            r2 = u * u + v * v
            if np.any(r2 < 1e-14) or np.any(r2 + 2 * lam[j] <= 0):
                raise DegenerateParameter("action translation undefined at the elliptic point")
            s = np.sqrt(1.0 + 2.0 * lam[j] / r2)
            out[..., c] = qstar + s * u
            out[..., S + c] = s * v
            c2 = 2.0 * lam[j] / (s * r2 * r2)
            blocks[..., j, 0, 0] = s - c2 * u * u
            blocks[..., j, 0, 1] = -c2 * u * v
            blocks[..., j, 1, 0] = -c2 * u * v
            blocks[..., j, 1, 1] = s - c2 * v * v
            dlam[..., c, j] = u / (s * r2)
            dlam[..., S + c, j] = v / (s * r2)
        return out, blocks, dlam

    def family_F_lambda(self, centers, lam: NDArray, x: NDArray) -> NDArray:
        """F_λ(x) = G_λ(F(x)); F_0 = F."""
        return self.counterterm(centers, lam, self.map_F(x))[0]

    def family_with_derivatives(self, centers, lam: NDArray, x: NDArray):
        """(F_λ(x), DF_λ(x), ∂F_λ/∂λ(x)) batched over leading axes."""
        y, DF = self.map_and_jacobian(x)
        out, blocks, dlam = self.counterterm(centers, lam, y)
        if self.cfg.counterterm == "action" and np.any(lam):
            S = self.S
            for j, c in enumerate(self.index_of(centers)):
                rows = DF[..., [c, S + c], :]
                DF[..., [c, S + c], :] = blocks[..., j, :, :] @ rows
        return out, DF, dlam

    # ── single-site structure ──────────────────────────────────
    @cached_property
    def elliptic_point(self) -> float:
        """Smallest positive q with W'(q) = 0 and W''(q) > 0."""
        if self.cfg.onsite == "pendulum":
            return math.pi
        dW = Polynomial(list(self.cfg.onsite)).deriv(1)
        roots = [r.real for r in dW.roots() if abs(r.imag) < 1e-12 and r.real > 1e-12]
        roots = sorted(r for r in roots if self.W.d2(np.asarray(r)) > 0)
        if not roots:
            raise ValueError("on-site potential has no elliptic point")
        return float(roots[0])

    @property
    def hyperbolic_point(self) -> float:
        return 0.0

    def onsite_multipliers(self) -> Tuple[NDArray, NDArray, NDArray]:
        """
        2×2 Verlet matrix of an uncoupled site at q = 0 with eigenvalues
        (λ₋, λ₊) and eigenvectors as columns.
        """
        h = self.cfg.step
        kappa = -float(self.W.d2(np.asarray(0.0)))
        kick = np.array([[1.0, 0.0], [0.5 * h * kappa, 1.0]])
        drift = np.array([[1.0, h], [0.0, 1.0]])
        one = kick @ drift @ kick
        M = np.linalg.matrix_power(one, self.cfg.substeps)
        tr = np.trace(M)
        if abs(tr) <= 2.0:
            raise NonHyperbolic(f"|trace| = {abs(tr):.6f} <= 2 at the background fixed point")
        vals, vecs = np.linalg.eig(M)
        order = np.argsort(np.abs(vals))
        return M, vals[order].real, vecs[:, order].real

    def rotation_number(self, x0: NDArray, n: int, center=None) -> float:
        """Mean turn per iterate of (q_c − q*, p_c) about the elliptic point."""
        c = int(self.index_of(self.sites[self.S // 2] if center is None else center)[0])
        x = np.asarray(x0, dtype=float)
        angles = np.empty(n + 1)
        angles[0] = math.atan2(x[self.S + c], x[c] - self.elliptic_point)
        for t in range(1, n + 1):
            x = self.map_F(x)
            angles[t] = math.atan2(x[self.S + c], x[c] - self.elliptic_point)
        return float(-(np.unwrap(angles)[-1] - angles[0]) / (2 * math.pi * n))

    def interaction_bound(self, gamma: DecayFunction) -> float:
        """C_V in |V_k''(0)| ≤ C_V Γ(k)."""
        return max(abs(float(pot.d2(np.asarray(0.0)))) / float(radial(gamma, k)) for k, pot in self.V)

    # ── continuous flow ────────────────────────────────────────
    def vector_field(self, t: float, x: NDArray) -> NDArray:
        return np.concatenate([x[self.S:], self.force(x[:self.S])])

    def flow(self, x: NDArray, t: float, variational: bool = False, t_eval=None):
        """
        Time-t map of the Hamiltonian flow (DOP853). With variational=True
        also returns DS_t. With t_eval, returns the samples at those times.
        """
        cfg = self.cfg
        if abs(t) > cfg.flow_horizon:
            raise ValueError(f"|t| = {abs(t)} beyond the flow horizon {cfg.flow_horizon}")
        x = np.asarray(x, dtype=float)
        n = 2 * self.S
        if t == 0:
            return (x.copy(), np.eye(n)) if variational else x.copy()

        if variational:
            def rhs(s, z):
                y, T = z[:n], z[n:].reshape(n, n)
                Tq, Tp = T[:self.S], T[self.S:]
                dT = np.concatenate([Tp, self._hessian_apply(y[:self.S], Tq)], axis=0)
                return np.concatenate([self.vector_field(s, y), dT.ravel()])
            z0 = np.concatenate([x, np.eye(n).ravel()])
        else:
            rhs, z0 = self.vector_field, x

        sol = solve_ivp(rhs, (0.0, t), z0, method="DOP853", rtol=cfg.flow_rtol,
                        atol=cfg.flow_atol, t_eval=t_eval)
        if sol.status != 0:
            raise IntegrationError(sol.message)
        if t_eval is not None:
            return sol.y[:n].T
        z = sol.y[:, -1]
        return (z[:n], z[n:].reshape(n, n)) if variational else z


def symplectic_form(S: int) -> NDArray:
    """J∞ = [[0, I], [−I, 0]] in the [q, p] layout."""
    eye, zero = np.eye(S), np.zeros((S, S))
    return np.block([[zero, eye], [-eye, zero]])


def loop_action(q: NDArray, p: NDArray) -> float:
    """∮ p dq along a closed sampled loop (trapezoid rule on the periodic samples)."""
    dq = np.roll(q, -1) - q
    return float(np.sum(0.5 * (p + np.roll(p, -1)) * dq))


def action_change(model: LatticeModel, centers, lam: NDArray, loop: NDArray, site=None) -> float:
    """
    (∮_{F_λ∘γ} p dq − ∮_{F∘γ} p dq)/(2π) at one site for a sampled loop γ
    (rows are phase points). A q-winding loop is closed through its lift.
    """
    where = np.asarray(centers).reshape(-1, model.cfg.dim)[0] if site is None else site
    i = int(model.index_of(where)[0])
    S = model.S

    def action(points: NDArray) -> float:
        q, p = points[:, i], points[:, S + i]
        dq = np.diff(q, append=q[0])
        dq[-1] += 2 * math.pi * np.rint(-dq[-1] / (2 * math.pi))
        return float(np.sum(0.5 * (p + np.roll(p, -1)) * dq))

    base = model.map_F(loop)
    moved = model.family_F_lambda(centers, lam, loop)
    return (action(moved) - action(base)) / (2 * math.pi)
