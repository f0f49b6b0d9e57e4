"""Critical points and Floer trajectories of the Rabinowitz action.

Two solvers are provided.  :func:`integrate_explore` integrates the positive
gradient flow forward in s with high Fourier modes removed; it is exploratory
only, because the full flow is ill-posed as an initial value problem.
:func:`solve_bvp` treats a whole trajectory as one unknown and minimises the
squared Floer residual with soft endpoint penalties.

The s-discretisation of the BVP uses the averaged gradient

    (u_{i+1} - u_i)/ds = int_0^1 grad A(u_i + tau (u_{i+1} - u_i)) dtau,

evaluated with three-point Gauss-Legendre quadrature.  It is second order in
ds and makes the discrete energy identity exact whenever the action is at
most quartic along segments.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg as sla
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

from .action import AlmostComplexSpec, action, gradient
from .critproj import ProjectionError, closest_point
from .hamiltonians import Bump, HamiltonianModel, Perturbed, build_model
from .loopspace import (
    Loop,
    LoopMultiplier,
    derivative_matrix,
    l2_norm,
    linf_norm,
    omega_matrix,
    resample_samples,
    spectral_derivative,
    standard_j,
)

CONSTANT = "constant-loops-on-Sigma"
ORBIT = "nontrivial-orbit"
SCHEMA_VERSION = 1

_GL_T = np.array([0.5 - np.sqrt(0.15), 0.5, 0.5 + np.sqrt(0.15)])
_GL_W = np.array([5.0, 8.0, 5.0]) / 18.0


class SolverError(RuntimeError):
    """A solver failed to reach its tolerance."""


# ---------------------------------------------------------------- orbits

@dataclass
class CriticalComponent:
    kind: str
    representative: LoopMultiplier
    action_value: float
    grad_norm: float = 0.0
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "action": self.action_value,
            "eta": self.representative.eta,
            "grad_norm": self.grad_norm,
            "samples": self.representative.samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CriticalComponent":
        u = LoopMultiplier(Loop(np.asarray(d["samples"])), d["eta"])
        return cls(d["kind"], u, d["action"], d.get("grad_norm", 0.0))


def circle_seed(radius: float, k: int = 1, eta: float | None = None, N: int = 128, n: int = 1,
                plane: int = 0) -> LoopMultiplier:
    """A circle in the (q_plane, p_plane) plane traversed k times."""
    t = np.arange(N) / N
    v = np.zeros((N, 2 * n))
    v[:, plane] = radius * np.cos(2 * np.pi * k * t)
    v[:, n + plane] = radius * np.sin(2 * np.pi * k * t)
    return LoopMultiplier(Loop(v), 2 * np.pi * k if eta is None else eta)


def _orbit_system(H, v, eta, D):
    N, d = v.shape
    F1 = spectral_derivative(v, axis=0) - eta * H.vector_field(v)
    F2 = float(np.mean(H.value(v)))
    return F1, F2


def _orbit_norm(F1, F2):
    return float(np.sqrt(np.mean(np.sum(F1 * F1, axis=1)) + F2 * F2))


def find_orbit(H: HamiltonianModel, seed: LoopMultiplier, tol: float = 1e-9, maxiter: int = 60,
               rcond: float = 1e-10) -> CriticalComponent:
    """Newton iteration with least-squares steps on (dv/dt - eta X^H(v), int H(v)).

    The minimum-norm step handles the kernel of the linearisation (time shifts,
    and the tangent space of Sigma for constant loops).
    """
    v = np.array(seed.samples, dtype=float)
    eta = float(seed.eta)
    N, d = v.shape
    D = derivative_matrix(N)
    KD = np.kron(D, np.eye(d))
    J0 = standard_j(d // 2)
    w = 1.0 / np.sqrt(N)
    F1, F2 = _orbit_system(H, v, eta, D)
    res = _orbit_norm(F1, F2)
    it = 0
    while res >= tol and it < maxiter:
        it += 1
        Hs = H.hessian(v)
        J11 = KD - eta * sla.block_diag(*(J0 @ Hj for Hj in Hs))
        J12 = -H.vector_field(v).reshape(-1, 1)
        J21 = H.gradient(v).reshape(1, -1) / N
        Jm = np.block([[w * J11, w * J12], [J21, np.zeros((1, 1))]])
        rhs = -np.concatenate([w * F1.ravel(), [F2]])
        step = np.linalg.lstsq(Jm, rhs, rcond=rcond)[0]
        lam = 1.0
        while lam > 1e-6:
            v_new = v + lam * step[:-1].reshape(N, d)
            eta_new = eta + lam * step[-1]
            F1n, F2n = _orbit_system(H, v_new, eta_new, D)
            res_new = _orbit_norm(F1n, F2n)
            if np.isfinite(res_new) and res_new < res:
                break
            lam *= 0.5
        else:
            raise SolverError(f"orbit Newton stalled at residual {res:.3e}")
        v, eta, F1, F2, res = v_new, eta_new, F1n, F2n, res_new
        if np.max(np.abs(v)) > 1e8:
            raise SolverError("orbit Newton diverged")
    if res >= tol:
        raise SolverError(f"orbit Newton did not converge: residual {res:.3e} after {maxiter} iterations")
    u = LoopMultiplier(Loop(v), eta)
    spread = np.max(np.linalg.norm(v - v.mean(axis=0), axis=1))
    kind = CONSTANT if abs(eta) < 1e-8 and spread < 1e-8 else ORBIT
    return CriticalComponent(kind, u, action(H, u), res, it)


def constant_component(H: HamiltonianModel, point, N: int = 128) -> CriticalComponent:
    x, _ = closest_point(H, point)
    u = LoopMultiplier(Loop.constant(x, N), 0.0)
    return CriticalComponent(CONSTANT, u, action(H, u), gradient(H, u).norm())


def orbit_family(H: HamiltonianModel, ks=(1, 2, 3), N: int = 128, radius: float | None = None,
                 eta_scale: float = 1.0) -> list[CriticalComponent]:
    """Orbits seeded by k-fold circles through the level set in the first symplectic plane."""
    out = []
    for k in ks:
        if radius is None:
            e = np.zeros(H.dim)
            e[0] = 1.0
            x, _ = closest_point(H, e)
            r = float(np.linalg.norm(x))
        else:
            r = radius
        sign = 1 if k > 0 else -1
        seed = circle_seed(r, abs(k), eta=sign * 2 * np.pi * abs(k) * eta_scale, N=N, n=H.n)
        if sign < 0:
            seed = LoopMultiplier(Loop(seed.samples[::-1][np.r_[-1, 0:N - 1]]), seed.eta)
        out.append(find_orbit(H, seed))
    return out


# ---------------------------------------------------------------- homotopies

def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return 3 * s**2 - 2 * s**3


def smoothstep_slope(s):
    s = np.asarray(s, dtype=float)
    return np.where((s > 0) & (s < 1), 6 * s - 6 * s**2, 0.0)


class HomotopySpec:
    """H_s = H0 + beta(s) h with a compactly supported bump h, and a constant J family."""

    MAX_SLOPE = 1.5

    def __init__(self, H0: HamiltonianModel, perturbation: Bump | None = None,
                 J: AlmostComplexSpec | None = None):
        self.H0 = H0
        self.perturbation = perturbation
        self.J = J if J is not None else AlmostComplexSpec(H0.n)
        self._cache: dict[float, HamiltonianModel] = {}

    @classmethod
    def constant(cls, H: HamiltonianModel, J: AlmostComplexSpec | None = None) -> "HomotopySpec":
        return cls(H, None, J)

    @property
    def is_constant(self) -> bool:
        return self.perturbation is None or self.perturbation.amplitude == 0.0

    @property
    def H1(self) -> HamiltonianModel:
        return self.H0 if self.is_constant else Perturbed(self.H0, self.perturbation)

    def beta(self, s):
        return smoothstep(s)

    def model_at(self, s: float) -> HamiltonianModel:
        if self.is_constant:
            return self.H0
        b = float(smoothstep(s))
        if b == 0.0:
            return self.H0
        if b not in self._cache:
            p = self.perturbation
            self._cache[b] = Perturbed(self.H0, Bump(p.center, p.width, b * p.amplitude))
        return self._cache[b]

    def ds_H(self, s: float, x) -> np.ndarray:
        if self.is_constant:
            return np.zeros(np.shape(x)[:-1])
        return float(smoothstep_slope(s)) * self.perturbation.value(x)

    @property
    def ds_H_inf(self) -> float:
        """max over s, x of |beta'(s) h(x)| = 3/2 max|h| (the bump peaks at its centre)."""
        if self.is_constant:
            return 0.0
        return self.MAX_SLOPE * abs(self.perturbation.amplitude)

    @property
    def J_inf(self) -> float:
        return self.J.norm_inf()

    def spec(self) -> dict:
        return {
            "H0": self.H0.spec(),
            "perturbation": None if self.perturbation is None else self.perturbation.spec(),
            "schedule": "3s^2-2s^3",
        }

    @classmethod
    def from_spec(cls, d: dict) -> "HomotopySpec":
        H0 = build_model(d["H0"]) if "name" in d["H0"] and d["H0"]["name"] != "perturbed" else None
        if H0 is None:
            raise ValueError("cannot rebuild a homotopy over a perturbed base")
        p = d.get("perturbation")
        bump = None if p is None else Bump(p["center"], p["width"], p["amplitude"])
        return cls(H0, bump)


def homotopy_condition(hom: HomotopySpec, c_tilde: float, eps0: float, J_inf: float | None = None) -> bool:
    """(c~ + |J|^{3/2}/eps0) |d_s H_s| < 1/8."""
    J_inf = hom.J_inf if J_inf is None else J_inf
    return bool((c_tilde + J_inf**1.5 / eps0) * hom.ds_H_inf < 0.125)


def novikov_window(a: float, b: float) -> tuple[float, float]:
    if a > b:
        raise ValueError("novikov_window requires a <= b")
    return min(2 * a, -1.0), max(2 * b, 1.0)


# ---------------------------------------------------------------- trajectories

@dataclass
class FloerTrajectory:
    s_grid: np.ndarray
    v: np.ndarray          # (S, N, 2n)
    eta: np.ndarray        # (S,)
    homotopy: HomotopySpec
    residual: float = float("nan")
    tol: float = float("nan")
    converged: bool = False
    method: str = "bvp"
    diagnostics: dict = field(default_factory=dict)

    @property
    def nodes(self) -> int:
        return len(self.s_grid)

    def state(self, i: int) -> LoopMultiplier:
        return LoopMultiplier(Loop(self.v[i]), self.eta[i])

    def states(self) -> list[LoopMultiplier]:
        return [self.state(i) for i in range(self.nodes)]

    def model(self, i: int) -> HamiltonianModel:
        return self.homotopy.model_at(self.s_grid[i])

    def action_trace(self) -> np.ndarray:
        return np.array([action(self.model(i), self.state(i)) for i in range(self.nodes)])

    def grad_norms(self, kind: str = "quadratic") -> np.ndarray:
        J = self.homotopy.J
        return np.array([gradient(self.model(i), self.state(i), J).norm(kind) for i in range(self.nodes)])

    def interval_energy(self, metric: str = "J") -> np.ndarray:
        """|u_{i+1} - u_i|^2 / ds_i per interval.

        ``metric="J"`` measures in the metric of J at the interval midpoint,
        ``"euclidean"`` in the flat L^2 x R product.
        """
        ds = np.diff(self.s_grid)
        dv = np.diff(self.v, axis=0)
        de = np.diff(self.eta)
        J = self.homotopy.J
        if J.is_standard or metric == "euclidean":
            sq = np.mean(np.sum(dv * dv, axis=2), axis=1)
        else:
            Om = omega_matrix(J.n)
            vm = 0.5 * (self.v[1:] + self.v[:-1])
            em = 0.5 * (self.eta[1:] + self.eta[:-1])
            sq = np.array([np.mean(np.einsum("ja,ab,jb->j", dv[i], Om, J.apply(vm[i], dv[i], em[i])))
                           for i in range(len(ds))])
        return (sq + de**2) / ds

    def energy_density(self, metric: str = "J") -> np.ndarray:
        """|d_s u|^2 at nodes from the adjacent intervals."""
        ds = np.diff(self.s_grid)
        e = self.interval_energy(metric) / ds
        out = np.empty(self.nodes)
        out[0], out[-1] = e[0], e[-1]
        out[1:-1] = 0.5 * (e[:-1] + e[1:])
        return out

    def energy(self, metric: str = "J") -> float:
        return float(np.sum(self.interval_energy(metric)))

    def l2_trace(self) -> np.ndarray:
        return np.sqrt(np.mean(np.sum(self.v**2, axis=2), axis=1))

    def linf_trace(self) -> np.ndarray:
        return np.max(np.linalg.norm(self.v, axis=2), axis=1)

    def midpoint_defect(self) -> np.ndarray:
        """|(u_{i+1}-u_i)/ds - grad A((u_i+u_{i+1})/2)| at interval midpoints (additive norm)."""
        out = []
        for i in range(self.nodes - 1):
            ds = self.s_grid[i + 1] - self.s_grid[i]
            mid = LoopMultiplier(Loop(0.5 * (self.v[i] + self.v[i + 1])), 0.5 * (self.eta[i] + self.eta[i + 1]))
            H = self.homotopy.model_at(0.5 * (self.s_grid[i] + self.s_grid[i + 1]))
            g = gradient(H, mid, self.homotopy.J)
            dv = (self.v[i + 1] - self.v[i]) / ds - g.v_part
            de = (self.eta[i + 1] - self.eta[i]) / ds - g.eta_part
            out.append(l2_norm(dv) + abs(de))
        return np.array(out)

    def truncated(self, i0: int, i1: int) -> "FloerTrajectory":
        sl = slice(i0, i1 + 1)
        return FloerTrajectory(self.s_grid[sl].copy(), self.v[sl].copy(), self.eta[sl].copy(), self.homotopy,
                               self.residual, self.tol, self.converged, self.method, dict(self.diagnostics))

    # ---- serialization
    def to_csv(self, path) -> None:
        a = self.action_trace()
        g = self.grad_norms()
        l2 = self.l2_trace()
        li = self.linf_trace()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "action", "grad_norm", "eta", "l2_norm", "linf_norm"])
            for row in zip(self.s_grid, a, g, self.eta, l2, li):
                w.writerow([repr(float(x)) for x in row])

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "homotopy": self.homotopy.spec(),
            "s_grid": self.s_grid.tolist(),
            "eta": self.eta.tolist(),
            "v": self.v.tolist(),
            "residual": self.residual,
            "tol": self.tol,
            "converged": self.converged,
            "diagnostics": self.diagnostics,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def from_dict(cls, d: dict, homotopy: HomotopySpec | None = None) -> "FloerTrajectory":
        hom = homotopy if homotopy is not None else HomotopySpec.from_spec(d["homotopy"])
        return cls(np.asarray(d["s_grid"]), np.asarray(d["v"]), np.asarray(d["eta"]), hom,
                   d["residual"], d["tol"], d["converged"], d["method"], d.get("diagnostics", {}))

    @classmethod
    def from_json(cls, path, homotopy: HomotopySpec | None = None) -> "FloerTrajectory":
        return cls.from_dict(json.loads(Path(path).read_text()), homotopy)


def constant_trajectory(hom: HomotopySpec, u: LoopMultiplier, s_grid) -> FloerTrajectory:
    s_grid = np.asarray(s_grid, dtype=float)
    S = len(s_grid)
    traj = FloerTrajectory(s_grid, np.repeat(u.samples[None], S, axis=0), np.full(S, u.eta), hom,
                           method="constant")
    traj.residual = float(max(gradient(traj.model(i), traj.state(i), hom.J).norm("additive") for i in range(S)))
    traj.converged = True
    return traj


# ---------------------------------------------------------------- explorer

def _mode_projector(N: int, cap: int) -> np.ndarray:
    k = np.abs(np.fft.fftfreq(N, d=1.0 / N))
    return (k <= cap).astype(float)


def _project_modes(x, mask):
    return np.real(np.fft.ifft(mask[:, None] * np.fft.fft(x, axis=0), axis=0))


def integrate_explore(hom, u0: LoopMultiplier, s_span, mode_cap: int, nodes: int = 101,
                      ceiling: float = 1e3, rtol: float = 1e-9, atol: float = 1e-11) -> FloerTrajectory:
    """Forward integration of d_s u = grad A(u) with modes |k| > mode_cap removed."""
    if isinstance(hom, HamiltonianModel):
        hom = HomotopySpec.constant(hom)
    N, d = u0.samples.shape
    if mode_cap > N // 2:
        raise ValueError("mode_cap must not exceed N/2")
    mask = _mode_projector(N, mode_cap)
    J = hom.J

    def split(y):
        return y[:-1].reshape(N, d), y[-1]

    def rhs(s, y):
        v, eta = split(y)
        v = _project_modes(v, mask)
        g = gradient(hom.model_at(s), LoopMultiplier(Loop(v), eta), J)
        return np.concatenate([_project_modes(g.v_part, mask).ravel(), [g.eta_part]])

    def blowup(s, y):
        return ceiling - np.linalg.norm(y) / np.sqrt(N)

    blowup.terminal = True
    y0 = np.concatenate([_project_modes(u0.samples, mask).ravel(), [u0.eta]])
    s_eval = np.linspace(s_span[0], s_span[1], nodes)
    sol = solve_ivp(rhs, s_span, y0, method="RK45", t_eval=s_eval, rtol=rtol, atol=atol, events=blowup)
    S = sol.y.shape[1]
    v = sol.y[:-1].T.reshape(S, N, d)
    eta = sol.y[-1].copy()
    traj = FloerTrajectory(sol.t.copy(), v, eta, hom, method="explore")
    trunc = []
    for i in range(S):
        g = gradient(traj.model(i), traj.state(i), J)
        cut = g.v_part - _project_modes(g.v_part, mask)
        trunc.append(l2_norm(cut))
    trunc = np.array(trunc)
    traj.residual = float(trunc.max()) if S else float("nan")
    traj.converged = sol.status == 0
    traj.diagnostics = {
        "mode_cap": int(mode_cap),
        "truncated_energy": trunc.tolist(),
        "truncated_energy_growing": bool(S > 1 and trunc[-1] > 10 * max(trunc[0], 1e-14)),
        "blowup": bool(sol.status == 1),
        "exploratory": True,
    }
    return traj


# ---------------------------------------------------------------- BVP solver

@dataclass
class BVPOptions:
    nodes: int = 200
    s_max: float = 16.0
    tol: float = 1e-8
    endpoint_tol: float = 1e-5
    max_iter: int = 80
    ncg_iters: int = 25
    endpoint_weight: float = 1e-2
    anchor_weight: float = 1.0
    anchor: bool = True
    seed_width: float = 1.0
    lm_mu: float = 1e-4
    verbose: bool = False


class _Problem:
    """Scaled coordinates: U = (v.ravel()/sqrt(N), eta), so the L^2 x R product is Euclidean."""

    def __init__(self, hom: HomotopySpec, s_grid, N, d, lam0: CriticalComponent, lam1: CriticalComponent,
                 opts: BVPOptions):
        self.hom = hom
        self.s = np.asarray(s_grid, dtype=float)
        self.ds = np.diff(self.s)
        self.N, self.d = N, d
        self.m = N * d + 1
        self.sq = np.sqrt(N)
        self.J0 = standard_j(d // 2)
        self.minusKD = -np.kron(derivative_matrix(N), self.J0)
        self.lam0, self.lam1 = lam0, lam1
        self.opts = opts
        mids = 0.5 * (self.s[:-1] + self.s[1:])
        self.mid_models = [hom.model_at(x) for x in mids]
        self.node_models = [hom.model_at(x) for x in self.s]
        self.k_anchor = len(self.s) // 2
        self.a_target = 0.5 * (lam0.action_value + lam1.action_value)
        self.J = hom.J
        # endpoint targets on the orbit side: time shifts of the representative
        self._orbit_modes = np.fft.fft(lam1.representative.samples, axis=0)

    # conversions
    def to_state(self, Ui) -> LoopMultiplier:
        return LoopMultiplier(Loop(Ui[:-1].reshape(self.N, self.d) * self.sq), Ui[-1])

    def from_state(self, u: LoopMultiplier) -> np.ndarray:
        return np.concatenate([u.samples.ravel() / self.sq, [u.eta]])

    def _groups(self, models):
        groups: dict[int, tuple[HamiltonianModel, list[int]]] = {}
        for i, H in enumerate(models):
            groups.setdefault(id(H), (H, []))[1].append(i)
        return groups.values()

    def grad_many(self, U, models):
        """Euclidean gradients of A in scaled coordinates for rows of U."""
        k = U.shape[0]
        out = np.empty_like(U)
        V = U[:, :-1].reshape(k, self.N, self.d) * self.sq
        eta = U[:, -1]
        for H, idx in self._groups(models):
            idx = np.asarray(idx)
            Vi, ei = V[idx], eta[idx]
            dV = spectral_derivative(Vi, axis=1)
            r = dV - ei[:, None, None] * H.vector_field(Vi)
            if self.J.is_standard:
                gv = -np.einsum("ab,kjb->kja", self.J0, r)
            else:
                gv = -np.stack([self.J.apply(Vi[q], r[q], ei[q]) for q in range(len(idx))])
            out[idx, :-1] = gv.reshape(len(idx), -1) / self.sq
            out[idx, -1] = -np.mean(H.value(Vi), axis=1)
        return out

    def hess_matrix(self, Ui, H):
        v = Ui[:-1].reshape(self.N, self.d) * self.sq
        eta = Ui[-1]
        m = self.m
        Hm = np.zeros((m, m))
        g = H.gradient(v)
        if self.J.is_standard:
            Hm[:-1, :-1] = self.minusKD - eta * sla.block_diag(*H.hessian(v))
            Hm[:-1, -1] = -g.ravel() / self.sq
        else:
            Js = self.J.matrix(v, eta)
            KD = -self.minusKD @ np.kron(np.eye(self.N), -self.J0)  # kron(D, I)
            inner = KD - eta * sla.block_diag(*(self.J0 @ Hj for Hj in H.hessian(v)))
            Hm[:-1, :-1] = -sla.block_diag(*Js) @ inner
            Hm[:-1, -1] = np.einsum("jab,jb->ja", Js, H.vector_field(v)).ravel() / self.sq
            # derivatives of J itself, by central differences
            r = spectral_derivative(v, axis=0) - eta * H.vector_field(v)
            h = 1e-6
            dJr = np.empty((self.N, self.d, self.d))
            for b in range(self.d):
                e = np.zeros(self.d)
                e[b] = h
                dJ = (self.J.matrix(v + e, eta) - self.J.matrix(v - e, eta)) / (2 * h)
                dJr[:, :, b] = np.einsum("jac,jc->ja", dJ, r)
            Hm[:-1, :-1] -= sla.block_diag(*dJr)
            dJe = (self.J.matrix(v, eta + h) - self.J.matrix(v, eta - h)) / (2 * h)
            Hm[:-1, -1] -= np.einsum("jac,jc->ja", dJe, r).ravel() / self.sq
        Hm[-1, :-1] = -g.ravel() / self.sq
        return Hm

    def hvp_many(self, U, W, models):
        """Hessian-vector products (scaled coordinates) at rows of U applied to rows of W."""
        k = U.shape[0]
        V = U[:, :-1].reshape(k, self.N, self.d) * self.sq
        eta = U[:, -1]
        Wv = W[:, :-1].reshape(k, self.N, self.d)
        We = W[:, -1]
        out = np.empty_like(W)
        for H, idx in self._groups(models):
            idx = np.asarray(idx)
            Vi = V[idx]
            dW = spectral_derivative(Wv[idx], axis=1)
            hv = (-np.einsum("ab,kjb->kja", self.J0, dW)
                  - eta[idx, None, None] * np.einsum("kjab,kjb->kja", H.hessian(Vi), Wv[idx]))
            g = H.gradient(Vi)
            hv = hv - We[idx, None, None] * g / self.sq
            out[idx, :-1] = hv.reshape(len(idx), -1)
            out[idx, -1] = -np.sum(g * Wv[idx], axis=(1, 2)) / self.sq
        return out

    # endpoint projections
    def proj_start(self, U0):
        u = self.to_state(U0)
        if self.lam0.kind == CONSTANT:
            x, _ = closest_point(self.hom.H0, u.samples.mean(axis=0))
            return self.from_state(LoopMultiplier(Loop.constant(x, self.N), 0.0))
        return self.from_state(_nearest_shift(self.lam0.representative, u))

    def proj_end(self, U1):
        u = self.to_state(U1)
        if self.lam1.kind == CONSTANT:
            x, _ = closest_point(self.hom.H1, u.samples.mean(axis=0))
            return self.from_state(LoopMultiplier(Loop.constant(x, self.N), 0.0))
        return self.from_state(_nearest_shift(self.lam1.representative, u))

    # objective pieces
    def residuals(self, U):
        Ua, Ub = U[:-1], U[1:]
        dU = Ub - Ua
        G = np.zeros_like(dU)
        for tq, wq in zip(_GL_T, _GL_W):
            G += wq * self.grad_many(Ua + tq * dU, self.mid_models)
        return dU / self.ds[:, None] - G

    def anchor_value(self, U):
        k = self.k_anchor
        return action(self.node_models[k], self.to_state(U[k])) - self.a_target

    def objective(self, U, with_parts=False):
        r = self.residuals(U)
        e0 = U[0] - self.proj_start(U[0])
        e1 = U[-1] - self.proj_end(U[-1])
        o = self.opts
        phi = 0.5 * np.sum(self.ds * np.sum(r * r, axis=1))
        phi += 0.5 * o.endpoint_weight * (e0 @ e0 + e1 @ e1)
        a = self.anchor_value(U) if o.anchor else 0.0
        phi += 0.5 * o.anchor_weight * a * a
        if with_parts:
            return phi, r, e0, e1, a
        return phi

    def objective_grad(self, U):
        phi, r, e0, e1, a = self.objective(U, with_parts=True)
        Ua, Ub = U[:-1], U[1:]
        dU = Ub - Ua
        grad = np.zeros_like(U)
        wr = r * self.ds[:, None]
        grad[:-1] -= wr / self.ds[:, None]
        grad[1:] += wr / self.ds[:, None]
        for tq, wq in zip(_GL_T, _GL_W):
            Uq = Ua + tq * dU
            hv = self.hvp_many(Uq, wr, self.mid_models)
            grad[:-1] -= wq * (1 - tq) * hv
            grad[1:] -= wq * tq * hv
        o = self.opts
        grad[0] += o.endpoint_weight * e0
        grad[-1] += o.endpoint_weight * e1
        if o.anchor:
            k = self.k_anchor
            grad[k] += o.anchor_weight * a * self.grad_many(U[k:k + 1], [self.node_models[k]])[0]
        return phi, grad

    def normal_equations(self, U):
        """Block-tridiagonal Gauss-Newton system: diagonal blocks, upper blocks, gradient."""
        S, m = U.shape
        phi, r, e0, e1, a = self.objective(U, with_parts=True)
        Dg = np.zeros((S, m, m))
        Up = np.zeros((S - 1, m, m))
        g = np.zeros((S, m))
        eye = np.eye(m)
        for i in range(S - 1):
            dU = U[i + 1] - U[i]
            A = -eye / self.ds[i]
            B = eye / self.ds[i]
            for tq, wq in zip(_GL_T, _GL_W):
                Hq = self.hess_matrix(U[i] + tq * dU, self.mid_models[i])
                A -= wq * (1 - tq) * Hq
                B -= wq * tq * Hq
            w = self.ds[i]
            Dg[i] += w * (A.T @ A)
            Dg[i + 1] += w * (B.T @ B)
            Up[i] = w * (A.T @ B)
            g[i] += w * (A.T @ r[i])
            g[i + 1] += w * (B.T @ r[i])
        o = self.opts
        Dg[0] += o.endpoint_weight * eye
        Dg[-1] += o.endpoint_weight * eye
        g[0] += o.endpoint_weight * e0
        g[-1] += o.endpoint_weight * e1
        if o.anchor:
            k = self.k_anchor
            ga = self.grad_many(U[k:k + 1], [self.node_models[k]])[0]
            Dg[k] += o.anchor_weight * np.outer(ga, ga)
            g[k] += o.anchor_weight * a * ga
        return phi, Dg, Up, g


def _nearest_shift(rep: LoopMultiplier, u: LoopMultiplier) -> LoopMultiplier:
    """Time shift of rep closest in L^2 to u (grid search refined by a parabola)."""
    N = rep.N
    c_rep = np.fft.fft(rep.samples, axis=0)
    c_u = np.fft.fft(u.samples, axis=0)
    corr = np.real(np.fft.ifft(np.sum(np.conj(c_rep) * c_u, axis=1)))
    j = int(np.argmax(corr))
    y0, y1, y2 = corr[j - 1], corr[j], corr[(j + 1) % N]
    den = y0 - 2 * y1 + y2
    off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
    tau = (j + off) / N
    k = np.fft.fftfreq(N, d=1.0 / N)
    shifted = np.real(np.fft.ifft(c_rep * np.exp(-2j * np.pi * k * tau)[:, None], axis=0))
    return LoopMultiplier(Loop(shifted), rep.eta)


def _block_tridiag_solve(Dg, Up, g, mu):
    """Solve (T + mu I) x = g for symmetric block-tridiagonal T (diagonal Dg, upper Up)."""
    S, m, _ = Dg.shape
    eye = np.eye(m)
    facs = []
    y = np.empty_like(g)
    X_prev = None
    for i in range(S):
        C = Dg[i] + mu * eye
        rhs = g[i].copy()
        if i > 0:
            C -= Up[i - 1].T @ X_prev
            rhs -= Up[i - 1].T @ sla.cho_solve(facs[-1], y[i - 1])
        fac = sla.cho_factor(C, lower=False, check_finite=False)
        facs.append(fac)
        y[i] = rhs
        if i < S - 1:
            X_prev = sla.cho_solve(fac, Up[i], check_finite=False)
    x = np.empty_like(g)
    x[-1] = sla.cho_solve(facs[-1], y[-1])
    for i in range(S - 2, -1, -1):
        x[i] = sla.cho_solve(facs[i], y[i] - Up[i] @ x[i + 1])
    return x


def seed_trajectory(lam0: CriticalComponent, lam1: CriticalComponent, s_grid, width: float = 1.0,
                    base_point=None):
    """tanh blend between a point of Lambda0 and the representative of Lambda1."""
    s_grid = np.asarray(s_grid)
    b = 0.5 * (1 + np.tanh(s_grid / width))
    r1 = lam1.representative
    if lam0.kind == CONSTANT and base_point is not None:
        r0 = LoopMultiplier(Loop.constant(base_point, r1.N), 0.0)
    else:
        r0 = lam0.representative
    v = (1 - b)[:, None, None] * r0.samples[None] + b[:, None, None] * r1.samples[None]
    eta = (1 - b) * r0.eta + b * r1.eta
    return v, eta


def solve_bvp(hom: HomotopySpec, endpoints, grid=None, opts: BVPOptions | None = None,
              initial: tuple[np.ndarray, np.ndarray] | None = None) -> FloerTrajectory:
    """Least-squares solve of d_s u = grad A^{H_s}(u) between two critical components.

    ``grid`` is an s-array; by default ``opts.nodes`` uniform nodes on
    [-opts.s_max, opts.s_max].  ``initial`` optionally supplies ``(v, eta)``
    on that grid.  The returned trajectory always carries its residual;
    ``converged`` is False when the tolerance was not met.
    """
    opts = opts or BVPOptions()
    if isinstance(hom, HamiltonianModel):
        hom = HomotopySpec.constant(hom)
    lam0, lam1 = endpoints
    s_grid = np.linspace(-opts.s_max, opts.s_max, opts.nodes) if grid is None else np.asarray(grid, float)
    N, d = lam1.representative.samples.shape
    prob = _Problem(hom, s_grid, N, d, lam0, lam1, opts)

    if initial is None:
        base = None
        if lam0.kind == CONSTANT:
            base = lam0.representative.samples[0]
            if lam1.kind == ORBIT:
                try:
                    base, _ = closest_point(hom.H0, lam1.representative.samples[0])
                except ProjectionError:
                    pass
        v0, e0 = seed_trajectory(lam0, lam1, s_grid, opts.seed_width, base)
    else:
        v0, e0 = initial
    U = np.concatenate([v0.reshape(len(s_grid), -1) / np.sqrt(N), e0[:, None]], axis=1)

    history = []
    # nonlinear conjugate gradients on the full objective
    if opts.ncg_iters > 0 and hom.J.is_standard:
        shape = U.shape

        def fun(x):
            phi, g = prob.objective_grad(x.reshape(shape))
            return phi, g.ravel()

        res = minimize(fun, U.ravel(), jac=True, method="CG", options={"maxiter": opts.ncg_iters, "gtol": 1e-14})
        U = res.x.reshape(shape)
        history.append(("ncg", float(res.fun)))

    # Gauss-Newton / Levenberg-Marquardt polish
    mu = opts.lm_mu
    phi = prob.objective(U)
    it = 0
    for it in range(1, opts.max_iter + 1):
        phi, Dg, Up, g = prob.normal_equations(U)
        scale = max(np.max(np.abs(np.einsum("kii->ki", Dg))), 1.0)
        improved = False
        for _ in range(12):
            step = _block_tridiag_solve(Dg, Up, -g, mu * scale)
            U_new = U + step
            phi_new = prob.objective(U_new)
            if np.isfinite(phi_new) and phi_new < phi:
                improved = True
                break
            mu *= 10.0
        history.append(("gn", float(phi), float(mu)))
        if opts.verbose:
            r = prob.residuals(U)
            print(f"gn {it:3d} phi={phi:.3e} mu={mu:.1e} res={np.max(np.abs(r)):.3e}")
        if not improved:
            break
        rel = (phi - phi_new) / max(phi, 1e-300)
        U = U_new
        mu = max(mu / 10.0, 1e-14)
        if phi_new < 1e-28 or rel < 1e-3:
            break

    S = len(s_grid)
    v = U[:, :-1].reshape(S, N, d) * np.sqrt(N)
    eta = U[:, -1].copy()
    traj = FloerTrajectory(s_grid, v, eta, hom, method="bvp", tol=opts.tol)
    r = prob.residuals(U)
    node_res = np.sqrt(np.sum(r[:, :-1] ** 2, axis=1)) + np.abs(r[:, -1])
    gap0 = float(np.linalg.norm(U[0] - prob.proj_start(U[0])))
    gap1 = float(np.linalg.norm(U[-1] - prob.proj_end(U[-1])))
    traj.residual = float(node_res.max())
    traj.converged = bool(traj.residual < opts.tol and max(gap0, gap1) < opts.endpoint_tol)
    traj.diagnostics = {
        "endpoint_gap_start": gap0,
        "endpoint_gap_end": gap1,
        "iterations": it,
        "objective": float(prob.objective(U)),
        "anchor_residual": float(prob.anchor_value(U)) if opts.anchor else None,
        "options": asdict(opts),
        "endpoint_actions": [lam0.action_value, lam1.action_value],
    }
    return traj


def refine(traj: FloerTrajectory, endpoints, opts: BVPOptions | None = None) -> FloerTrajectory:
    """Re-solve on the grid with s-spacing and t-spacing both halved.

    The coarse solution, interpolated (linearly in s, band-limited in t),
    seeds the fine solve; this also keeps the fine solution in the same
    t-shift gauge.  ``endpoints`` must be sampled at 2N points.
    """
    s = traj.s_grid
    fine_s = np.empty(2 * len(s) - 1)
    fine_s[::2] = s
    fine_s[1::2] = 0.5 * (s[:-1] + s[1:])
    N = traj.v.shape[1]
    v = resample_samples(traj.v, 2 * N, axis=1)
    vf = np.empty((len(fine_s),) + v.shape[1:])
    vf[::2] = v
    vf[1::2] = 0.5 * (v[:-1] + v[1:])
    ef = np.interp(fine_s, s, traj.eta)
    return solve_bvp(traj.homotopy, endpoints, grid=fine_s, opts=opts, initial=(vf, ef))
