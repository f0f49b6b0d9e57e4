"""The Rabinowitz action functional, its gradient, and its Hessian.

For a loop v and multiplier eta,

    A(v, eta) = int lambda0(dv/dt) dt - eta int H(v) dt,

with lambda0 = 1/2 sum (q dp - p dq).  Gradients are taken with respect to the
discrete L^2 x R inner product (time means), so ``<grad A, w>`` is exactly the
directional derivative of the discrete functional.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hamiltonians import HamiltonianModel, Bump
from .loopspace import (
    LoopMultiplier,
    TangentVector,
    l2_norm,
    omega_matrix,
    spectral_derivative,
    standard_j,
)


@dataclass(frozen=True)
class ActionGradient:
    v_part: np.ndarray
    eta_part: float

    def as_tangent(self) -> TangentVector:
        return TangentVector(self.v_part, self.eta_part)

    def norm(self, kind: str = "quadratic") -> float:
        a, b = l2_norm(self.v_part), abs(self.eta_part)
        return a + b if kind == "additive" else float(np.hypot(a, b))


class AlmostComplexSpec:
    """An omega0-compatible almost complex structure J(x, eta).

    The default is J0 everywhere.  A perturbation conjugates J0 by the
    symplectic matrix exp(phi(x, eta) K) where K = J0 S for a fixed diagonal S,
    and phi is a smooth bump in x (supported in the ball ``region``) times a
    smooth cutoff that vanishes for |eta| <= ``ng``.
    """

    def __init__(self, n: int, region_center=None, region_radius: float = 0.0,
                 strength: float = 0.0, ng: float = 1.0):
        self.n = int(n)
        self.J0 = standard_j(self.n)
        self.strength = float(strength)
        self.ng = float(ng)
        self.region_radius = float(region_radius)
        self.region_center = np.zeros(2 * self.n) if region_center is None else np.asarray(region_center, float)
        S = np.diag(np.concatenate([np.ones(self.n), -np.ones(self.n)]))
        self._K = self.J0 @ S
        self._bump = None
        if self.strength != 0.0 and self.region_radius > 0:
            self._bump = Bump(self.region_center, self.region_radius, 1.0)

    @property
    def is_standard(self) -> bool:
        return self._bump is None

    def _phi(self, x, eta):
        if self._bump is None:
            return np.zeros(np.shape(x)[:-1])
        a = np.abs(eta) - self.ng
        with np.errstate(divide="ignore"):
            cut = np.where(a > 0, np.exp(-1.0 / np.where(a > 0, a, 1.0)), 0.0)
        return self.strength * self._bump.value(x) * cut

    def matrix(self, x, eta: float = 0.0) -> np.ndarray:
        """J at each point of x, shape (..., 2n, 2n)."""
        x = np.asarray(x, dtype=float)
        phi = self._phi(x, eta)
        # exp(phi K) with K symmetric, K^2 = I: cosh(phi) I + sinh(phi) K
        eye = np.eye(2 * self.n)
        A = np.cosh(phi)[..., None, None] * eye + np.sinh(phi)[..., None, None] * self._K
        Ainv = np.cosh(phi)[..., None, None] * eye - np.sinh(phi)[..., None, None] * self._K
        return A @ self.J0 @ Ainv

    def apply(self, x, vec, eta: float = 0.0) -> np.ndarray:
        if self.is_standard:
            return np.einsum("ij,...j->...i", self.J0, vec)
        return np.einsum("...ij,...j->...i", self.matrix(x, eta), vec)

    def norm_inf(self, count: int = 4000, seed: int = 0) -> float:
        """Sampled sup of the operator norm of J (at least 1)."""
        if self.is_standard:
            return 1.0
        rng = np.random.default_rng(seed)
        d = rng.standard_normal((count, 2 * self.n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = self.region_radius * rng.random(count) ** (1 / (2 * self.n))
        pts = self.region_center + r[:, None] * d
        Js = self.matrix(pts, eta=self.ng + 10.0)
        return float(max(1.0, np.linalg.norm(Js, 2, axis=(-2, -1)).max()))


def _J0_apply(n, vec):
    J0 = standard_j(n)
    return np.einsum("ij,...j->...i", J0, vec)


def _lambda0(x, w, n):
    """lambda0_x(w) = 1/2 x^T Omega w."""
    Om = omega_matrix(n)
    return 0.5 * np.einsum("...i,ij,...j->...", x, Om, w)


def action(H: HamiltonianModel, u: LoopMultiplier) -> float:
    v = u.samples
    dv = spectral_derivative(v, axis=0)
    return float(np.mean(_lambda0(v, dv, H.n)) - u.eta * np.mean(H.value(v)))


def action_alt_primitive(H: HamiltonianModel, u: LoopMultiplier) -> float:
    """Action computed with the primitive sum q_i dp_i instead of lambda0."""
    v = u.samples
    dv = spectral_derivative(v, axis=0)
    n = H.n
    return float(np.mean(np.sum(v[:, :n] * dv[:, n:], axis=1)) - u.eta * np.mean(H.value(v)))


def loop_residual(H: HamiltonianModel, u: LoopMultiplier) -> np.ndarray:
    """dv/dt - eta X^H(v) at each sample."""
    v = u.samples
    return spectral_derivative(v, axis=0) - u.eta * H.vector_field(v)


def gradient(H: HamiltonianModel, u: LoopMultiplier, J: AlmostComplexSpec | None = None) -> ActionGradient:
    """(-J(dv/dt - eta X^H(v)), -int H(v))."""
    r = loop_residual(H, u)
    if J is None or J.is_standard:
        vp = -_J0_apply(H.n, r)
    else:
        vp = -J.apply(u.samples, r, u.eta)
    return ActionGradient(vp, float(-np.mean(H.value(u.samples))))


def differential(H: HamiltonianModel, u: LoopMultiplier, w: TangentVector) -> float:
    """dA_u(w) as the L^2 x R pairing with the J0-gradient."""
    g = gradient(H, u)
    return float(np.mean(np.sum(g.v_part * w.xi, axis=1)) + g.eta_part * w.sigma)


def pairing(a: TangentVector, b: TangentVector) -> float:
    return float(np.mean(np.sum(a.xi * b.xi, axis=1)) + a.sigma * b.sigma)


def hessian_apply(H: HamiltonianModel, u: LoopMultiplier, w: TangentVector,
                  J: AlmostComplexSpec | None = None) -> TangentVector:
    """(-J0(d xi/dt - sigma X^H(v)) - eta Hess H(xi), -int dH(xi))."""
    if J is not None and not J.is_standard:
        raise ValueError("hessian_apply is only defined for the standard complex structure")
    v = u.samples
    xi = np.asarray(w.xi)
    inner = spectral_derivative(xi, axis=0) - w.sigma * H.vector_field(v)
    vp = -_J0_apply(H.n, inner) - u.eta * np.einsum("jab,jb->ja", H.hessian(v), xi)
    ep = -np.mean(np.sum(H.gradient(v) * xi, axis=1))
    return TangentVector(vp, float(ep))


def metric(J: AlmostComplexSpec | None, u: LoopMultiplier, a: TangentVector, b: TangentVector) -> float:
    """g_J(a, b) = int omega0(a, J b) + sigma_a sigma_b."""
    n = u.dim_n
    Om = omega_matrix(n)
    Jb = _J0_apply(n, b.xi) if (J is None or J.is_standard) else J.apply(u.samples, b.xi, u.eta)
    return float(np.mean(np.einsum("ja,ab,jb->j", a.xi, Om, Jb)) + a.sigma * b.sigma)


def dHY_identity_residual(H: HamiltonianModel, u: LoopMultiplier, Y) -> float:
    """|A - dA(Y o v, eta) - eta int dH(Y)| for a Liouville field Y."""
    v = u.samples
    Yv = np.asarray(Y(v))
    lhs = action(H, u) - differential(H, u, TangentVector(Yv, u.eta))
    rhs = u.eta * np.mean(np.sum(H.gradient(v) * Yv, axis=1))
    return float(abs(lhs - rhs))
