"""Tubular neighbourhood of the constant critical component Sigma x {0}.

A pair (v, eta) near Sigma x {0} is written as a base point vbar in Sigma
(viewed as a constant loop) plus a normal vector (xi, sigma) = (v - vbar, eta)
whose mean mean(xi) is parallel to grad H(vbar).  The projection P returns the
base point.  In the flat L^2 chart parallel transport is the identity, so the
Taylor expansion of the gradient about P(u) needs no connection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .action import ActionGradient, gradient, hessian_apply
from .hamiltonians import HamiltonianModel, move_to_level
from .loopspace import Loop, LoopMultiplier, TangentVector, l2_norm, mean, w12_norm

PROJECT_TOL = 1e-11
PROJECT_MAXITER = 50


class ProjectionError(RuntimeError):
    """Newton failed: the point is outside the region where P is defined."""


@dataclass(frozen=True)
class TubeCoordinates:
    base: np.ndarray
    normal: TangentVector
    multiplier: float  # lambda with mean(v) - vbar = lambda grad H(vbar)

    @property
    def radius(self) -> float:
        return l2_norm(self.normal.xi) + abs(self.normal.sigma)

    def base_point(self, N: int) -> LoopMultiplier:
        return LoopMultiplier(Loop.constant(self.base, N), 0.0)

    def reconstruct(self) -> LoopMultiplier:
        """Phi((vbar, 0), (xi, sigma)) = (vbar + xi, sigma)."""
        return LoopMultiplier(Loop(self.base + self.normal.xi), self.normal.sigma)


def closest_point(H: HamiltonianModel, y, tol: float = PROJECT_TOL, maxiter: int = PROJECT_MAXITER):
    """Nearest point of H^{-1}(0) to y: solve y - x = lam grad H(x), H(x) = 0.

    Returns ``(x, lam)``.
    """
    y = np.asarray(y, dtype=float)
    x0 = H.closest_point(y)
    if x0 is None:
        x0, ok = move_to_level(H, y[None], 0.0)
        x0 = x0[0]
        if not ok[0]:
            raise ProjectionError("gradient retraction to the level set failed")
    x = np.array(x0, dtype=float)
    g = H.gradient(x)
    gg = g @ g
    if gg == 0:
        raise ProjectionError("critical point of H on the level set")
    lam = float((y - x) @ g / gg)
    d = H.dim
    for _ in range(maxiter):
        g = H.gradient(x)
        F = np.concatenate([y - x - lam * g, [H.value(x)]])
        if np.max(np.abs(F)) < tol * (1 + np.max(np.abs(y))):
            return x, lam
        Jm = np.zeros((d + 1, d + 1))
        Jm[:d, :d] = -np.eye(d) - lam * H.hessian(x)
        Jm[:d, d] = -g
        Jm[d, :d] = g
        try:
            step = np.linalg.solve(Jm, -F)
        except np.linalg.LinAlgError as exc:
            raise ProjectionError("singular Newton system in closest_point") from exc
        x = x + step[:d]
        lam = lam + step[d]
        if not np.all(np.isfinite(x)):
            break
    raise ProjectionError("closest_point Newton iteration did not converge")


def project(u: LoopMultiplier, H: HamiltonianModel) -> TubeCoordinates:
    """Tube coordinates of u relative to Sigma x {0}."""
    m = mean(u.loop)
    vbar, lam = closest_point(H, m)
    return TubeCoordinates(vbar, TangentVector(u.samples - vbar, u.eta), lam)


def tube_radius(u: LoopMultiplier, H: HamiltonianModel) -> float:
    try:
        return project(u, H).radius
    except ProjectionError:
        return float("inf")


def _additive(t: TangentVector) -> float:
    return l2_norm(t.xi) + abs(t.sigma)


def taylor_remainder(u: LoopMultiplier, H: HamiltonianModel, M: float):
    """(lhs, rhs, pass) for |grad A(u) - grad A(P u) - Hess_{P u}(Phi^{-1} u)| <= M/2 radius^2."""
    tc = project(u, H)
    base = tc.base_point(u.N)
    g = gradient(H, u).as_tangent()
    g0 = gradient(H, base).as_tangent()
    lin = hessian_apply(H, base, tc.normal)
    lhs = _additive(g - g0 - lin)
    rhs = 0.5 * M * tc.radius**2
    return lhs, rhs, bool(lhs <= rhs + 1e-10)


def normal_part(H: HamiltonianModel, vbar, xi: np.ndarray) -> np.ndarray:
    """Remove from xi the component of its mean lying in Ker dH(vbar)."""
    g = H.gradient(vbar)
    m = xi.mean(axis=0)
    tangential = m - (m @ g) / (g @ g) * g
    return xi - tangential


def hessian_normal_floor(vbar, w: TangentVector, H: HamiltonianModel):
    """(lhs, floor, pass) for |Hess A(w)| >= (|xi|_{W12} + |sigma|)/6 at (vbar, 0)."""
    vbar = np.asarray(vbar, dtype=float)
    if np.linalg.norm(H.gradient(vbar)) < 0.5:
        raise ValueError("normal floor requires |grad H(vbar)| >= 1/2")
    base = LoopMultiplier(Loop.constant(vbar, w.N), 0.0)
    hw = hessian_apply(H, base, w)
    lhs = _additive(hw)
    floor = (w12_norm(w.xi) + abs(w.sigma)) / 6.0
    return lhs, floor, bool(lhs >= floor - 1e-10)


def hessian_in_normal_space(u: LoopMultiplier, H: HamiltonianModel) -> float:
    """|<mean of the v-part of Hess(Phi^{-1} u), w>| maximised over a basis w of Ker dH(vbar)."""
    tc = project(u, H)
    hw = hessian_apply(H, tc.base_point(u.N), tc.normal)
    g = H.gradient(tc.base)
    g = g / np.linalg.norm(g)
    m = hw.xi.mean(axis=0)
    return float(np.linalg.norm(m - (m @ g) * g))


@dataclass
class DriftReport:
    lhs: float
    rhs: float
    passed: bool
    segments: list
    precondition_notes: list


def in_tube_mask(states, H: HamiltonianModel, delta: float):
    """Per-state (inside, base, radius) with inside meaning radius < delta and |grad H(P u)| >= 1/2."""
    inside, bases, radii = [], [], []
    for u in states:
        try:
            tc = project(u, H)
        except ProjectionError:
            inside.append(False)
            bases.append(None)
            radii.append(float("inf"))
            continue
        ok = tc.radius < delta and np.linalg.norm(H.gradient(tc.base)) >= 0.5
        inside.append(bool(ok))
        bases.append(tc.base)
        radii.append(tc.radius)
    return np.array(inside), bases, np.array(radii)


def maximal_runs(mask) -> list[tuple[int, int]]:
    """Index ranges [i, j] (inclusive) of maximal runs of True."""
    runs, start = [], None
    for i, m in enumerate(mask):
        if m and start is None:
            start = i
        if not m and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def drift_audit(s_grid, states, actions, H: HamiltonianModel, delta: float, M_hat: float,
                r_threshold: float | None = None) -> DriftReport:
    """|P u(s1) - P u(s0)| <= M_hat |A(u(s1)) - A(u(s0))| on every pair inside each in-tube run.

    Only nodes with s outside the open interval (0, 1) are used, so the
    Hamiltonian is constant along each run.
    """
    s_grid = np.asarray(s_grid)
    actions = np.asarray(actions)
    inside, bases, _ = in_tube_mask(states, H, delta)
    outside_homotopy = (s_grid <= 0) | (s_grid >= 1)
    notes = []
    if not np.all(inside | ~outside_homotopy):
        notes.append("trajectory leaves the tube; audit restricted to maximal in-tube runs")
    runs = [r for r in maximal_runs(inside & outside_homotopy) if r[1] > r[0]]
    worst = (0.0, 0.0)
    worst_ratio = -np.inf
    seg_reports = []
    for i0, i1 in runs:
        B = np.array([bases[i] for i in range(i0, i1 + 1)])
        a = actions[i0:i1 + 1]
        dP = np.linalg.norm(B[:, None, :] - B[None, :, :], axis=-1)
        dA = M_hat * np.abs(a[:, None] - a[None, :])
        gap = dP - dA
        k = np.unravel_index(np.argmax(gap), gap.shape)
        seg_reports.append({
            "s_range": [float(s_grid[i0]), float(s_grid[i1])],
            "max_lhs": float(dP.max()),
            "worst_gap": float(gap[k]),
            "in_N_r": None if r_threshold is None else bool(np.all(np.linalg.norm(B, axis=1) >= r_threshold)),
        })
        if gap[k] > worst_ratio:
            worst_ratio = gap[k]
            worst = (float(dP[k]), float(dA[k]))
    passed = bool(worst_ratio <= 1e-10) if runs else True
    return DriftReport(worst[0], worst[1], passed, seg_reports, notes)


def tube_injectivity_check(H: HamiltonianModel, delta: float, n_samples: int = 500, seed: int = 0,
                           sigma_radius: float | None = None):
    """Sample tube coordinates with |normal| < delta and check that P recovers the base.

    Normal offsets are constant loops along the unit normal, which is the
    direction in which distinct fibres first collide.  Returns
    ``(passed, witness)``.
    """
    from .hamiltonians import sample_level_set

    rng = np.random.default_rng(seed)
    bases = sample_level_set(H, n_samples, rng)
    if len(bases) == 0:
        return True, None
    g = H.gradient(bases)
    nrm = g / np.linalg.norm(g, axis=1, keepdims=True)
    t = delta * (2 * rng.random(len(bases)) - 1)
    # include the extreme offsets explicitly
    t[: len(t) // 4] = -delta * (1 - 1e-9)
    pts = bases + t[:, None] * nrm
    for b, x, tt in zip(bases, pts, t):
        try:
            back, _ = closest_point(H, x)
        except ProjectionError:
            return False, {"base": b.tolist(), "offset": float(tt), "reason": "projection failed"}
        if np.linalg.norm(back - b) > 1e-7 * (1 + np.linalg.norm(b)):
            return False, {"base": b.tolist(), "offset": float(tt), "point": x.tolist(),
                           "projected_to": back.tolist()}
    return True, None


def gradient_vs_radius(u: LoopMultiplier, H: HamiltonianModel):
    """(|grad A(u)|_additive, radius/12)."""
    tc = project(u, H)
    g: ActionGradient = gradient(H, u)
    return g.norm("additive"), tc.radius / 12.0
