"""The radial plurisubharmonic function F = |x|^2/4 along Floer cylinders.

For a Floer cylinder with J = J0 and a fixed Hamiltonian one has

    Laplacian(F o v) >= eta^2 f1(v) + (d eta/ds) f2(v),

where f2 = d^C F(X^H) = -<grad H, x>/2 and f1 collects the remaining
quadratic terms.  :func:`elliptic_audit` checks this inequality on the
(s, t) grid wherever |v| exceeds a chosen radius, and evaluates the L^1
budgets that control the source term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .bounds import BoundLedger, in_B
from .hamiltonians import HamiltonianModel
from .loopspace import spectral_derivative, standard_j

SCHEMA_VERSION = 1


def F(x):
    x = np.asarray(x, dtype=float)
    return 0.25 * np.sum(x * x, axis=-1)


def _terms(H: HamiltonianModel, x):
    x = np.asarray(x, dtype=float)
    J0 = standard_j(x.shape[-1] // 2)
    g = H.gradient(x)
    A = H.hessian(x)
    Jg = np.einsum("ab,...b->...a", J0, g)
    Jx = np.einsum("ab,...b->...a", J0, x)
    Ax = np.einsum("...ab,...b->...a", A, x)
    AJx = np.einsum("...ab,...b->...a", A, Jx)
    grad_phi = 0.5 * Jg - 0.5 * AJx        # gradient of dF(X^H) = <x/2, J0 grad H>
    grad_f2 = -0.5 * (g + Ax)
    return g, Jg, grad_phi, grad_f2


def f1_f2(H: HamiltonianModel, x):
    """(f1, f2) at points x of shape (..., 2n)."""
    x = np.asarray(x, dtype=float)
    g, Jg, grad_phi, grad_f2 = _terms(H, x)
    f2 = -0.5 * np.sum(g * x, axis=-1)
    f1 = (np.sum(grad_phi * Jg, axis=-1) - np.sum(g * g, axis=-1)
          - np.sum(grad_f2 * grad_f2, axis=-1) - np.sum(grad_phi * grad_phi, axis=-1))
    return f1, f2


def grad_f2(H: HamiltonianModel, x):
    return _terms(H, x)[3]


def grad_f1_fd(H: HamiltonianModel, x, h: float = 1e-5):
    """Central-difference gradient of f1 (it involves the Hessian, so no closed form is kept)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for k in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[k] = h
        out[..., k] = (f1_f2(H, x + e)[0] - f1_f2(H, x - e)[0]) / (2 * h)
    return out


def alpha_constants(M: float, h1: float, L: float):
    from .bounds import alpha_constants as _ac

    return _ac(M, h1, L)


@dataclass
class AlphaCheck:
    count: int
    violations: list
    worst_ratios: dict

    @property
    def passed(self) -> bool:
        return not self.violations


def alpha_check(H: HamiltonianModel, alphas, count: int = 10000, seed: int = 0, r_max: float = 50.0) -> AlphaCheck:
    """Sample |f1|, |f2|, |grad f1|, |grad f2| against alpha_i (|x|+1)^k."""
    a1, a2, a3, a4 = alphas
    rng = np.random.default_rng(seed)
    d = H.dim
    dirs = rng.standard_normal((count, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = np.exp(rng.uniform(np.log(1e-3), np.log(r_max), count))
    pts = r[:, None] * dirs
    pts[0] = 0.0
    f1, f2 = f1_f2(H, pts)
    gf1 = np.linalg.norm(grad_f1_fd(H, pts), axis=1)
    gf2 = np.linalg.norm(grad_f2(H, pts), axis=1)
    w = np.linalg.norm(pts, axis=1) + 1
    ratios = {
        "f1": np.abs(f1) / (a1 * w**2), "f2": np.abs(f2) / (a2 * w**2),
        "grad_f1": gf1 / (a3 * w), "grad_f2": gf2 / (a4 * w),
    }
    viol = []
    for name, rat in ratios.items():
        tol = 1e-6 if name == "grad_f1" else 1e-12  # finite-difference noise in grad f1
        bad = np.nonzero(rat > 1 + tol)[0]
        if len(bad):
            viol.append({"bound": name, "point": pts[bad[0]].tolist(), "ratio": float(rat[bad[0]])})
    return AlphaCheck(count, viol, {k: float(v.max()) for k, v in ratios.items()})


def psh_residual(n: int, count: int = 100, seed: int = 0) -> float:
    """max |(-d d^C F)(a, b) - omega0(a, b)| at random points and vectors.

    d^C F = dF o J0 is the 1-form x -> J0^T grad F(x); its exterior
    derivative is assembled from a central-difference Jacobian, which is
    exact for this linear form.
    """
    rng = np.random.default_rng(seed)
    J0 = standard_j(n)
    Om = -J0
    worst = 0.0

    def alpha(x):
        return J0.T @ (0.5 * x)

    for _ in range(count):
        x = rng.standard_normal(2 * n) * 5
        Dm = np.empty((2 * n, 2 * n))
        for k in range(2 * n):
            e = np.zeros(2 * n)
            e[k] = 1.0
            Dm[:, k] = (alpha(x + e) - alpha(x - e)) / 2
        a, b = rng.standard_normal(2 * n), rng.standard_normal(2 * n)
        d_alpha = b @ Dm @ a - a @ Dm @ b
        worst = max(worst, abs(-d_alpha - a @ Om @ b))
    return float(worst)


# ---------------------------------------------------------------- the (s, t) grid

def laplacian_fd(Fsv: np.ndarray, s_grid) -> np.ndarray:
    """Five-point Laplacian on a uniform s-grid times the periodic t-grid; NaN on the s edges."""
    ds = float(s_grid[1] - s_grid[0])
    if not np.allclose(np.diff(s_grid), ds, rtol=1e-9, atol=1e-12):
        raise ValueError("the five-point Laplacian needs a uniform s-grid")
    dt = 1.0 / Fsv.shape[1]
    out = np.full_like(Fsv, np.nan)
    out[1:-1] = (Fsv[2:] - 2 * Fsv[1:-1] + Fsv[:-2]) / ds**2
    out[1:-1] += (np.roll(Fsv, -1, axis=1) - 2 * Fsv + np.roll(Fsv, 1, axis=1))[1:-1] / dt**2
    return out


def laplacian_spectral_t(Fsv: np.ndarray, s_grid) -> np.ndarray:
    """Same s-differences, spectral second derivative in t (cross-check)."""
    ds = float(s_grid[1] - s_grid[0])
    out = np.full_like(Fsv, np.nan)
    out[1:-1] = (Fsv[2:] - 2 * Fsv[1:-1] + Fsv[:-2]) / ds**2
    d2t = spectral_derivative(spectral_derivative(Fsv, axis=1), axis=1)
    out[1:-1] += d2t[1:-1]
    return out


def source_term(traj, H: HamiltonianModel | None = None) -> np.ndarray:
    """f(s, t) = eta^2 f1(v) + (d eta/ds) f2(v) with d eta/ds by central differences."""
    H = traj.homotopy.H0 if H is None else H
    f1, f2 = f1_f2(H, traj.v)
    deta = np.gradient(traj.eta, traj.s_grid)
    return traj.eta[:, None] ** 2 * f1 + deta[:, None] * f2


def label_periodic(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Connected components of an (s, t) mask with t periodic (4-connectivity)."""
    lab, n = ndimage.label(mask)
    if n == 0:
        return lab, 0
    parent = list(range(n + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(mask.shape[0]):
        a, b = lab[i, 0], lab[i, -1]
        if a and b:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = sorted({find(k) for k in range(1, n + 1)})
    remap = np.zeros(n + 1, dtype=int)
    for k in range(1, n + 1):
        remap[k] = roots.index(find(k)) + 1
    return remap[lab], len(roots)


@dataclass
class EllipticPatch:
    index: int
    s_range: tuple
    nodes: int
    interior_nodes: int
    min_margin: float
    witness: dict | None
    sup_interior: float
    sup_boundary: float
    l1_f: float
    l1_dt_f: float
    l1_ds_f: float
    budgets: dict
    flags: list = field(default_factory=list)
    passed: bool = True

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class EllipticReport:
    radius: float
    tol_disc: float
    patches: list
    passed: bool
    notes: list = field(default_factory=list)
    tol_round: float = 0.0

    def to_dict(self) -> dict:
        return {"radius": self.radius, "tol_disc": self.tol_disc, "tol_round": self.tol_round,
                "passed": self.passed, "notes": self.notes,
                "patches": [p.to_dict() for p in self.patches]}


def w11_budgets(ledger: BoundLedger, eps: float, vbound: float) -> dict:
    """L^1 budgets for f, d_t f and d_s f on a patch."""
    fe, fy = ledger.frak_e, ledger.frak_y
    a1, a2, a3, a4 = ledger.alpha1, ledger.alpha2, ledger.alpha3, ledger.alpha4
    M, h1 = ledger.M, ledger.h1
    v = vbound
    return {
        "f": (fe / eps) * (v + 1) ** 2 * (a1 * fy**2 / eps + a2),
        "dt_f": fe * (v + 1) * (a3 * fy**2 / eps + a4) * (1 + (fy / eps) * (M * v + h1)),
        "ds_f": fe * (v + 1) * ((v + 1) * (2 * a1 * fy + a2 * (M * v + h1)) / eps + a3 * fy**2 / eps + a4),
    }


def elliptic_fields(traj, H: HamiltonianModel | None = None):
    Fsv = F(traj.v)
    lap = laplacian_fd(Fsv, traj.s_grid)
    f = source_term(traj, H)
    return Fsv, lap, f


def rounding_tolerance(traj) -> float:
    """Floating-point error of the five-point stencil applied to F o v."""
    ds = float(traj.s_grid[1] - traj.s_grid[0])
    dt = 1.0 / traj.v.shape[1]
    scale = float(np.max(np.abs(F(traj.v)))) + 1.0
    return 64 * np.finfo(float).eps * scale * (4 / ds**2 + 4 / dt**2)


def elliptic_audit(traj, K_inf_radius: float, ledger: BoundLedger, eps: float | None = None,
                   tol_disc: float = 0.0, vbound: float | None = None) -> EllipticReport:
    """Check Laplacian(F o v) >= f - tol_disc on every patch where |v| > K_inf_radius.

    A floating-point allowance (:func:`rounding_tolerance`) is always added.
    """
    eps = ledger.eps if eps is None else eps
    vbound = ledger.l2_bound if vbound is None else vbound
    H = traj.homotopy.H0
    Fsv, lap, f = elliptic_fields(traj, H)
    norms = np.linalg.norm(traj.v, axis=2)
    mask = norms > K_inf_radius
    lab, npatch = label_periodic(mask)
    S, N = Fsv.shape
    ds = float(traj.s_grid[1] - traj.s_grid[0])
    dt = 1.0 / N
    budgets = w11_budgets(ledger, eps, vbound)
    notes = []
    K_r = max(ledger.inputs["K_radius"], ledger.inputs["V_radius"])
    if K_inf_radius < K_r:
        notes.append("radius is below the perturbation radius; H_s and J may vary on patches")
    if not traj.homotopy.is_constant or not traj.homotopy.J.is_standard:
        notes.append("homotopy or J is not constant; f uses H0 and J0")
    tol_round = rounding_tolerance(traj)
    ft = spectral_derivative(f, axis=1)
    fs = np.gradient(f, traj.s_grid, axis=0)
    patches = []
    all_ok = True
    for k in range(1, npatch + 1):
        P = lab == k
        rows = np.nonzero(P.any(axis=1))[0]
        inner = P.copy()
        inner[0] = inner[-1] = False
        inner[1:-1] &= P[2:] & P[:-2]
        inner &= np.roll(P, 1, axis=1) & np.roll(P, -1, axis=1)
        boundary = P & ~inner
        margin = lap - f + tol_disc + tol_round
        if inner.any():
            mvals = np.where(inner, margin, np.inf)
            idx = np.unravel_index(np.argmin(mvals), mvals.shape)
            min_margin = float(mvals[idx])
            witness = {"s": float(traj.s_grid[idx[0]]), "t": idx[1] / N, "laplacian": float(lap[idx]),
                       "f": float(f[idx])} if min_margin < 0 else None
        else:
            min_margin, witness = float("inf"), None
        l1_f = float(np.sum(np.abs(f[P])) * ds * dt)
        l1_t = float(np.sum(np.abs(ft[P])) * ds * dt)
        l1_s = float(np.sum(np.abs(fs[P])) * ds * dt)
        s0, s1 = float(traj.s_grid[rows[0]]), float(traj.s_grid[rows[-1]])
        flags = []
        if l1_f > budgets["f"]:
            flags.append("L1 norm of f exceeds its budget")
        if l1_t > budgets["dt_f"]:
            flags.append("L1 norm of d_t f exceeds its budget")
        if l1_s > budgets["ds_f"]:
            flags.append("L1 norm of d_s f exceeds its budget")
        if s1 - s0 > ledger.dwell_max:
            flags.append("patch longer than the dwell bound")
        if rows[0] == 0 or rows[-1] == S - 1:
            flags.append("patch touches the end of the s-grid")
        ok = min_margin >= 0 and not any("exceeds" in x or "longer" in x for x in flags)
        all_ok &= ok
        patches.append(EllipticPatch(
            k, (s0, s1), int(P.sum()), int(inner.sum()), min_margin, witness,
            float(Fsv[inner].max()) if inner.any() else float("nan"),
            float(Fsv[boundary].max()) if boundary.any() else float("nan"),
            l1_f, l1_t, l1_s, budgets, flags, ok))
    return EllipticReport(float(K_inf_radius), float(tol_disc), patches, bool(all_ok), notes, float(tol_round))


def discretisation_tolerance(levels) -> tuple[float, float, float]:
    """Successive differences of the Laplacian residual across nested grids.

    ``levels`` are three trajectories whose grids refine by 2 in both s and t
    and share their s-range.  Returns (tol_coarse, tol_mid, shrink ratio),
    where tol_coarse = max |D_h - D_{h/2}| and tol_mid = max |D_{h/2} - D_{h/4}|
    on the coarse nodes, D = Laplacian(F o v) - f.
    """
    Ds = []
    for tr in levels:
        Fsv, lap, f = elliptic_fields(tr)
        Ds.append(lap - f)

    def restrict(D, level):
        step = 2**level
        return D[::step, ::step]

    c0 = Ds[0]
    c1 = restrict(Ds[1], 1)
    c2 = restrict(Ds[2], 2)
    if c0.shape != c1.shape or c0.shape != c2.shape:
        raise ValueError("trajectory grids are not nested by factors of 2")
    valid = np.isfinite(c0) & np.isfinite(c1) & np.isfinite(c2)
    t01 = float(np.max(np.abs(c0 - c1)[valid]))
    t12 = float(np.max(np.abs(c1 - c2)[valid]))
    return t01, t12, t01 / t12 if t12 > 0 else float("inf")


def k_infinity_radius(trajs, ledger: BoundLedger, eps: float | None = None, margin: float = 0.1) -> float:
    """Smallest radius containing the perturbation regions and every loop at an in-B node, plus a margin."""
    eps = ledger.eps if eps is None else eps
    r = max(ledger.inputs["K_radius"], ledger.inputs["V_radius"])
    for tr in trajs:
        for i in range(tr.nodes):
            u = tr.state(i)
            if in_B(tr.homotopy, u, ledger.frak_a, ledger.frak_y, eps):
                r = max(r, float(np.max(np.linalg.norm(u.samples, axis=1))))
    return (1 + margin) * r


def heatmap_rows(traj, H: HamiltonianModel | None = None):
    """(s, t, F o v, Laplacian, f) rows for plotting."""
    Fsv, lap, f = elliptic_fields(traj, H)
    S, N = Fsv.shape
    for i in range(S):
        for j in range(N):
            yield (float(traj.s_grid[i]), j / N, float(Fsv[i, j]), float(lap[i, j]), float(f[i, j]))
