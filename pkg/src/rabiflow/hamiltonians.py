"""Hamiltonian models on (R^{2n}, omega0) and their admissibility certificates.

Every model evaluates on arrays of points with shape ``(..., 2n)``.  Three
growth conditions are certified:

* H1 -- a global Liouville field X with |X| <= c1(|x|+1) and
  dH(X) >= c2|x|^2 - c3;
* H2 -- sup |D^3 H_x| |x| <= L;
* H3 -- a Liouville field X on the band |H| < nu with
  |X| <= c4(|x|^2+1) and dH(X) >= c5.

Constants are fit on radial shells.  Only the sphere family and centred
quadratic forms carry closed-form constants; the status of everything else is
``sampled-only``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .loopspace import omega_matrix, standard_j

VERIFIED = "verified"
FALSIFIED = "falsified"
SAMPLED = "sampled-only"
SCHEMA_VERSION = 1

# relative safety margin applied to constants that come from sampling only
SAMPLED_MARGIN = 0.02


class HamiltonianModel:
    """Base class: subclasses provide value/gradient/hessian/d3_bound."""

    name = "abstract"

    def __init__(self, n: int):
        self.n = int(n)
        self.J0 = standard_j(self.n)

    @property
    def dim(self) -> int:
        return 2 * self.n

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    def d3_bound(self, x):
        """Upper bound for the operator norm of D^3 H at x."""
        raise NotImplementedError

    def liouville_global(self, x):
        return 0.5 * np.asarray(x, dtype=float)

    def liouville_local(self, x):
        return self.liouville_global(x)

    def liouville_jacobian(self, x, which: str = "global", h: float = 1e-6):
        """Jacobian of a Liouville field at a single point (central differences)."""
        f = self.liouville_global if which == "global" else self.liouville_local
        x = np.asarray(x, dtype=float)
        cols = []
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            cols.append((f(x + e) - f(x - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    def vector_field(self, x):
        """Hamiltonian vector field X^H = J0 grad H, so that -J0 X^H = grad H."""
        return np.einsum("ij,...j->...i", self.J0, self.gradient(x))

    def closest_point(self, x):
        """Analytic nearest point on H^{-1}(0), or None when unavailable."""
        return None

    def closed_form_constants(self, nu: float) -> dict | None:
        """Constants with a registered proof, or None."""
        return None

    def params(self) -> dict:
        return {}

    def spec(self) -> dict:
        return {"name": self.name, "n": self.n, **self.params()}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec()})"


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dim:
        raise ValueError(f"expected points in R^{dim}, got shape {x.shape}")
    return x


class QuadraticForm(HamiltonianModel):
    """H(x) = 1/2 (x-p)^T A (x-p) - level with linear Liouville field B(x-p)."""

    name = "quadratic_form"

    def __init__(self, matrix, level: float = 1.0, center=None, liouville=None):
        A = np.asarray(matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] % 2:
            raise ValueError("matrix must be square with even size")
        if not np.allclose(A, A.T):
            raise ValueError("matrix must be symmetric")
        super().__init__(A.shape[0] // 2)
        self.A = 0.5 * (A + A.T)
        self.level = float(level)
        self.center = np.zeros(self.dim) if center is None else np.asarray(center, dtype=float)
        self.B = 0.5 * np.eye(self.dim) if liouville is None else np.asarray(liouville, dtype=float)
        Om = omega_matrix(self.n)
        if not np.allclose(self.B.T @ Om + Om @ self.B, Om, atol=1e-12):
            raise ValueError("liouville matrix B must satisfy B^T Omega + Omega B = Omega")

    def value(self, x):
        y = _as_points(x, self.dim) - self.center
        return 0.5 * np.einsum("...i,ij,...j->...", y, self.A, y) - self.level

    def gradient(self, x):
        y = _as_points(x, self.dim) - self.center
        return y @ self.A

    def hessian(self, x):
        x = _as_points(x, self.dim)
        return np.broadcast_to(self.A, x.shape[:-1] + self.A.shape).copy()

    def d3_bound(self, x):
        return np.zeros(np.shape(x)[:-1])

    def liouville_global(self, x):
        y = _as_points(x, self.dim) - self.center
        return y @ self.B.T

    def liouville_jacobian(self, x, which="global", h=None):
        return self.B.copy()

    def closed_form_constants(self, nu):
        if np.any(self.center != 0):
            return None
        S = 0.5 * (self.A @ self.B + (self.A @ self.B).T)
        lam_S = float(np.linalg.eigvalsh(S)[0])
        normB = float(np.linalg.norm(self.B, 2))
        out = {"L": 0.0}
        if lam_S > 0:
            out.update(c1=normB, c2=lam_S, c3=0.0)
        eigA = np.linalg.eigvalsh(self.A)
        if lam_S > 0 and eigA[0] > 0 and self.level > nu:
            out.update(c4=normB / 2, c5=lam_S * 2 * (self.level - nu) / float(eigA[-1]))
        return out

    def params(self):
        return {
            "matrix": self.A.tolist(),
            "level": self.level,
            "center": self.center.tolist(),
            "liouville": self.B.tolist(),
        }


class ShiftedSphere(QuadraticForm):
    """H(x) = 1/2 |x - p|^2 - R^2/2, whose zero set is the sphere of radius R about p."""

    name = "shifted_sphere"

    def __init__(self, n: int = 1, center=None, radius: float = np.sqrt(2.0)):
        dim = 2 * int(n)
        self.radius = float(radius)
        super().__init__(np.eye(dim), level=0.5 * self.radius**2, center=center)

    def closest_point(self, x):
        y = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(y, axis=-1, keepdims=True)
        if np.any(r == 0):
            return None
        return self.center + self.radius * y / r

    def params(self):
        return {"center": self.center.tolist(), "radius": self.radius}


class Quartic(HamiltonianModel):
    """H(x) = scale |x|^4 - level."""

    name = "quartic"

    def __init__(self, n: int = 1, scale: float = 1.0, level: float = 1.0):
        super().__init__(n)
        self.scale = float(scale)
        self.level = float(level)

    def value(self, x):
        r2 = np.sum(_as_points(x, self.dim) ** 2, axis=-1)
        return self.scale * r2**2 - self.level

    def gradient(self, x):
        x = _as_points(x, self.dim)
        return 4 * self.scale * np.sum(x * x, axis=-1, keepdims=True) * x

    def hessian(self, x):
        x = _as_points(x, self.dim)
        r2 = np.sum(x * x, axis=-1)[..., None, None]
        return self.scale * (4 * r2 * np.eye(self.dim) + 8 * x[..., :, None] * x[..., None, :])

    def d3_bound(self, x):
        return 24 * abs(self.scale) * np.linalg.norm(_as_points(x, self.dim), axis=-1)

    def params(self):
        return {"scale": self.scale, "level": self.level}


class Zero(HamiltonianModel):
    name = "zero"

    def value(self, x):
        return np.zeros(np.shape(x)[:-1])

    def gradient(self, x):
        return np.zeros(np.shape(x))

    def hessian(self, x):
        return np.zeros(np.shape(x)[:-1] + (self.dim, self.dim))

    def d3_bound(self, x):
        return np.zeros(np.shape(x)[:-1])


class Linear(HamiltonianModel):
    """H(x) = <a, x> - c; its zero set is a hyperplane."""

    name = "linear"

    def __init__(self, a, c: float = 0.0):
        a = np.asarray(a, dtype=float)
        super().__init__(a.size // 2)
        self.a = a
        self.c = float(c)

    def value(self, x):
        return _as_points(x, self.dim) @ self.a - self.c

    def gradient(self, x):
        return np.broadcast_to(self.a, np.shape(x)).copy()

    def hessian(self, x):
        return np.zeros(np.shape(x)[:-1] + (self.dim, self.dim))

    def d3_bound(self, x):
        return np.zeros(np.shape(x)[:-1])

    def closest_point(self, x):
        x = np.asarray(x, dtype=float)
        return x - ((x @ self.a - self.c) / (self.a @ self.a))[..., None] * self.a

    def params(self):
        return {"a": self.a.tolist(), "c": self.c}


class Bump(HamiltonianModel):
    """Smooth bump h(x) = A psi(|x-c|^2 / w^2), psi(r) = exp(1 - 1/(1-r)) for r < 1.

    Supported in the closed ball of radius w about c, with h(c) = A.
    """

    name = "bump"

    def __init__(self, center, width: float, amplitude: float):
        center = np.asarray(center, dtype=float)
        super().__init__(center.size // 2)
        self.center = center
        self.width = float(width)
        self.amplitude = float(amplitude)

    def _psi(self, rho):
        """psi and its first three derivatives in rho."""
        inside = rho < 1.0
        u = np.where(inside, 1.0 - rho, 1.0)
        with np.errstate(over="ignore", under="ignore"):
            psi = np.where(inside, np.exp(1.0 - 1.0 / u), 0.0)
        g = -1.0 / u**2
        g1 = -2.0 / u**3
        g2 = -6.0 / u**4
        d1 = psi * g
        d2 = psi * (g * g + g1)
        d3 = psi * (g**3 + 3 * g * g1 + g2)
        return psi, d1, d2, d3

    def _local(self, x):
        y = _as_points(x, self.dim) - self.center
        rho = np.sum(y * y, axis=-1) / self.width**2
        return y, rho

    def value(self, x):
        _, rho = self._local(x)
        return self.amplitude * self._psi(rho)[0]

    def gradient(self, x):
        y, rho = self._local(x)
        d1 = self._psi(rho)[1]
        return self.amplitude * (2.0 / self.width**2) * d1[..., None] * y

    def hessian(self, x):
        y, rho = self._local(x)
        _, d1, d2, _ = self._psi(rho)
        w2 = self.width**2
        outer = y[..., :, None] * y[..., None, :]
        return self.amplitude * (4.0 / w2**2 * d2[..., None, None] * outer
                                 + 2.0 / w2 * d1[..., None, None] * np.eye(self.dim))

    def d3_bound(self, x):
        y, rho = self._local(x)
        _, _, d2, d3 = self._psi(rho)
        r = np.linalg.norm(y, axis=-1)
        w2 = self.width**2
        return abs(self.amplitude) * (8 * np.abs(d3) * r**3 / w2**3 + 12 * np.abs(d2) * r / w2**2)

    def c3_norm(self, x):
        """Pointwise max of |h|, |grad h|, |Hess h|, and the D^3 bound."""
        return np.max(np.stack([
            np.abs(self.value(x)),
            np.linalg.norm(self.gradient(x), axis=-1),
            np.linalg.norm(self.hessian(x), ord=2, axis=(-2, -1)),
            self.d3_bound(x),
        ]), axis=0)

    @property
    def support_radius(self) -> float:
        """Radius of the smallest origin-centred ball containing the support."""
        return float(np.linalg.norm(self.center) + self.width)

    def params(self):
        return {"center": self.center.tolist(), "width": self.width, "amplitude": self.amplitude}


class Perturbed(HamiltonianModel):
    """base + h for a compactly supported perturbation h; Liouville fields come from base."""

    def __init__(self, base: HamiltonianModel, bump: Bump):
        if base.n != bump.n:
            raise ValueError("dimension mismatch between base and perturbation")
        super().__init__(base.n)
        self.base = base
        self.bump = bump
        self.name = f"{base.name}+bump"

    def value(self, x):
        return self.base.value(x) + self.bump.value(x)

    def gradient(self, x):
        return self.base.gradient(x) + self.bump.gradient(x)

    def hessian(self, x):
        return self.base.hessian(x) + self.bump.hessian(x)

    def d3_bound(self, x):
        return self.base.d3_bound(x) + self.bump.d3_bound(x)

    def liouville_global(self, x):
        return self.base.liouville_global(x)

    def liouville_local(self, x):
        return self.base.liouville_local(x)

    def liouville_jacobian(self, x, which="global", h=1e-6):
        return self.base.liouville_jacobian(x, which, h)

    def spec(self):
        return {"name": "perturbed", "n": self.n, "base": self.base.spec(), "bump": self.bump.spec()}


class Scaled(HamiltonianModel):
    """t * H for a fixed model H and scalar t (used by homotopies)."""

    def __init__(self, model: HamiltonianModel, factor: float):
        super().__init__(model.n)
        self.model = model
        self.factor = float(factor)
        self.name = f"{factor}*{model.name}"

    def value(self, x):
        return self.factor * self.model.value(x)

    def gradient(self, x):
        return self.factor * self.model.gradient(x)

    def hessian(self, x):
        return self.factor * self.model.hessian(x)

    def d3_bound(self, x):
        return abs(self.factor) * self.model.d3_bound(x)


# ---------------------------------------------------------------- registry

def _sphere_plus_bump(n=1, center=None, radius=np.sqrt(2.0), bump_center=None,
                      bump_width=0.5, bump_amplitude=1e-4):
    base = ShiftedSphere(n=n, center=center, radius=radius)
    if bump_center is None:
        bump_center = np.zeros(2 * n)
        bump_center[0] = radius
    return Perturbed(base, Bump(bump_center, bump_width, bump_amplitude))


def _quadratic_form(n=None, matrix=None, level=1.0, center=None, liouville=None):
    if matrix is None:
        raise ValueError("quadratic_form requires 'matrix'")
    return QuadraticForm(matrix, level=level, center=center, liouville=liouville)


REGISTRY: dict[str, Callable[..., HamiltonianModel]] = {
    "shifted_sphere": lambda n=1, center=None, radius=np.sqrt(2.0): ShiftedSphere(n, center, radius),
    "sphere": lambda n=1: ShiftedSphere(n),
    "quadratic_form": _quadratic_form,
    "sphere_plus_bump": _sphere_plus_bump,
    "quartic": lambda n=1, scale=1.0, level=1.0: Quartic(n, scale, level),
    "zero": lambda n=1: Zero(n),
    "linear": lambda n=None, a=(1.0, 0.0), c=0.0: Linear(a, c),
}


def build_model(spec: dict) -> HamiltonianModel:
    """Instantiate a model from ``{"name": ..., **params}``."""
    spec = dict(spec)
    name = spec.pop("name", None)
    if name not in REGISTRY:
        raise KeyError(f"unknown Hamiltonian model {name!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[name](**spec)


def hyperbola(level: float = 1.0) -> QuadraticForm:
    """H = (q^2 - p^2)/2 - level on R^2 with the Liouville field (3q/2, -p/2).

    The zero set is a non-compact hyperbola; dH(X) = 3q^2/2 + p^2/2 is coercive.
    """
    return QuadraticForm(np.diag([1.0, -1.0]), level=level, liouville=np.diag([1.5, -0.5]))


# ---------------------------------------------------------------- sampling

@dataclass(frozen=True)
class SamplingPlan:
    r_max: float = 50.0
    shell_step: float = 0.5
    directions: int = 200
    seed: int = 0
    nu: float = 0.5
    band_samples: int = 4000
    ball_samples: int = 4000
    ball_radius: float = 4.0

    def shell_points(self, dim: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        radii = np.arange(0.0, self.r_max + 0.5 * self.shell_step, self.shell_step)
        dirs = rng.standard_normal((self.directions, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = [np.zeros((1, dim))]
        for r in radii[1:]:
            pts.append(r * dirs)
        return np.concatenate(pts)

    def ball_points(self, dim: int, radius: float | None = None) -> np.ndarray:
        rng = np.random.default_rng(self.seed + 1)
        radius = self.ball_radius if radius is None else radius
        d = rng.standard_normal((self.ball_samples, dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = radius * rng.random(self.ball_samples) ** (1.0 / dim)
        return r[:, None] * d


def move_to_level(H: HamiltonianModel, x, level, iters: int = 30):
    """Newton steps along grad H until H(x) = level; returns (points, converged mask)."""
    x = np.array(x, dtype=float)
    level = np.broadcast_to(np.asarray(level, dtype=float), x.shape[:-1])
    for _ in range(iters):
        g = H.gradient(x)
        g2 = np.sum(g * g, axis=-1)
        r = H.value(x) - level
        ok = g2 > 1e-24
        step = np.where(ok, r / np.where(ok, g2, 1.0), 0.0)
        x = x - step[..., None] * g
    res = np.abs(H.value(x) - level)
    scale = 1.0 + np.abs(level)
    return x, (res < 1e-10 * scale) & np.all(np.isfinite(x), axis=-1)


def sample_band(H: HamiltonianModel, nu: float, count: int, rng, radius: float = 6.0,
                levels=None) -> np.ndarray:
    """Points with |H| < nu, obtained by pushing random points onto random levels."""
    dim = H.dim
    x = rng.standard_normal((count, dim))
    x *= (radius * rng.random(count) ** (1.0 / dim) / np.linalg.norm(x, axis=1))[:, None]
    if levels is None:
        # half of the targets sit on the band edges, where the infima live
        levels = nu * (2 * rng.random(count) - 1) * 0.999
        edge = rng.random(count) < 0.5
        levels[edge] = nu * (1 - 1e-6) * np.sign(levels[edge])
    y, ok = move_to_level(H, x, levels)
    y = y[ok]
    return y[np.abs(H.value(y)) < nu]


def sample_level_set(H: HamiltonianModel, count: int, rng, radius: float = 6.0) -> np.ndarray:
    return sample_band(H, 1.0, count, rng, radius=radius, levels=np.zeros(count))


# ---------------------------------------------------------------- certificates

@dataclass
class ConditionResult:
    constants: dict
    status: str
    witness: dict = field(default_factory=dict)


def _margin_up(x):
    return float(x) * (1 + SAMPLED_MARGIN) + 1e-12


def _margin_down(x):
    return float(x) * (1 - SAMPLED_MARGIN)


def _point(x) -> list:
    return [float(v) for v in np.ravel(x)]


def _h1_points(H, plan):
    pts = plan.shell_points(H.dim)
    return np.concatenate([pts, plan.ball_points(H.dim)])


def certify_H1(H: HamiltonianModel, plan: SamplingPlan = SamplingPlan()) -> ConditionResult:
    x = _h1_points(H, plan)
    X = H.liouville_global(x)
    r = np.linalg.norm(x, axis=1)
    dHX = np.sum(H.gradient(x) * X, axis=1)
    ratio1 = np.linalg.norm(X, axis=1) / (r + 1)
    outer = r >= 0.5 * plan.r_max
    ratio2 = dHX[outer] / r[outer] ** 2
    i2 = int(np.argmin(ratio2))
    c2_fit = float(ratio2[i2])
    if not c2_fit > 1e-12:
        return ConditionResult({"c1": float(ratio1.max()), "c2": c2_fit, "c3": float("nan")}, FALSIFIED,
                               {"point": _point(x[outer][i2]), "dH(X)": float(dHX[outer][i2]),
                                "reason": "dH(X) does not grow quadratically"})
    closed = H.closed_form_constants(plan.nu) or {}
    if {"c1", "c2", "c3"} <= closed.keys():
        c1, c2, c3 = closed["c1"], closed["c2"], closed["c3"]
        status = VERIFIED
    else:
        c1 = _margin_up(ratio1.max())
        c2 = _margin_down(c2_fit)
        c3 = _margin_up(max(0.0, float(np.max(c2 * r**2 - dHX))))
        status = SAMPLED
    viol1 = np.linalg.norm(X, axis=1) - c1 * (r + 1)
    viol2 = c2 * r**2 - c3 - dHX
    worst = int(np.argmax(np.maximum(viol1, viol2)))
    tol = 1e-9 * (1 + r[worst] ** 2)
    witness = {"point": _point(x[worst]), "slack": float(-max(viol1[worst], viol2[worst]))}
    if max(viol1[worst], viol2[worst]) > tol:
        status = FALSIFIED
    return ConditionResult({"c1": float(c1), "c2": float(c2), "c3": float(c3)}, status, witness)


def certify_H2(H: HamiltonianModel, plan: SamplingPlan = SamplingPlan(), theta: float = 0.0) -> ConditionResult:
    x = _h1_points(H, plan)
    r = np.linalg.norm(x, axis=1)
    prod = H.d3_bound(x) * r
    L_fit = float(prod.max())
    shells = plan.shell_points(H.dim)
    rs = np.linalg.norm(shells, axis=1)
    p_shell = H.d3_bound(shells) * rs
    far = p_shell[rs >= plan.r_max - 1e-9].max()
    mid = p_shell[np.abs(rs - 0.5 * plan.r_max) < 0.5 * plan.shell_step].max()
    zero = np.zeros((1, H.dim))
    hess0 = float(np.linalg.norm(H.hessian(zero)[0], 2))
    H0 = float(abs(H.value(zero)[0]))
    g0 = float(np.linalg.norm(H.gradient(zero)[0]))
    i = int(np.argmax(prod))
    if far > 1e-12 and far > 1.5 * mid:
        return ConditionResult({"L": float("inf"), "hess0": hess0, "H0": H0, "grad0": g0}, FALSIFIED,
                               {"point": _point(x[i]), "d3*|x|": L_fit,
                                "reason": "third derivative times radius grows along the shells"})
    closed = H.closed_form_constants(plan.nu) or {}
    if "L" in closed:
        L, status = closed["L"], VERIFIED
        if L_fit > L + 1e-12:
            status = FALSIFIED
    else:
        L, status = (_margin_up(L_fit) if L_fit > 0 else 0.0), SAMPLED
    return ConditionResult({"L": float(L), "hess0": hess0, "H0": H0, "grad0": g0}, status,
                           {"point": _point(x[i]), "d3*|x|": L_fit})


def certify_H3(H: HamiltonianModel, plan: SamplingPlan = SamplingPlan(), nu: float | None = None) -> ConditionResult:
    nu = plan.nu if nu is None else float(nu)
    rng = np.random.default_rng(plan.seed + 2)
    pts = np.concatenate([_h1_points(H, plan),
                          sample_band(H, nu, plan.band_samples, rng, radius=plan.ball_radius + 2),
                          sample_band(H, nu, plan.band_samples, rng, radius=plan.r_max)])
    band = pts[np.abs(H.value(pts)) < nu]
    if len(band) == 0:
        return ConditionResult({"c4": float("nan"), "c5": float("nan"), "nu": nu}, FALSIFIED,
                               {"reason": "no sample found in the band |H| < nu"})
    X = H.liouville_local(band)
    r = np.linalg.norm(band, axis=1)
    ratio4 = np.linalg.norm(X, axis=1) / (r**2 + 1)
    dHX = np.sum(H.gradient(band) * X, axis=1)
    i5 = int(np.argmin(dHX))
    if not dHX[i5] > 1e-12:
        return ConditionResult({"c4": float(ratio4.max()), "c5": float(dHX[i5]), "nu": nu}, FALSIFIED,
                               {"point": _point(band[i5]), "dH(X)": float(dHX[i5]),
                                "reason": "dH(X) is not bounded below by a positive constant on the band"})
    closed = H.closed_form_constants(nu) or {}
    if {"c4", "c5"} <= closed.keys():
        c4, c5, status = closed["c4"], closed["c5"], VERIFIED
    else:
        c4, c5, status = _margin_up(ratio4.max()), _margin_down(dHX[i5]), SAMPLED
    viol = np.maximum(np.linalg.norm(X, axis=1) - c4 * (r**2 + 1), c5 - dHX)
    w = int(np.argmax(viol))
    if viol[w] > 1e-9:
        status = FALSIFIED
    return ConditionResult({"c4": float(c4), "c5": float(c5), "nu": nu}, status,
                           {"point": _point(band[w]), "slack": float(-viol[w]), "band_samples": int(len(band))})


@dataclass
class AdmissibilityCertificate:
    """Constants of H1-H3 with derived quantities and evidence.

    ``theta`` and ``K_radius`` describe the perturbation ball; with
    ``theta = 0`` the constants are those of the base model alone.  When
    ``theta > 0`` the constants are uniform over the whole ball (see
    :meth:`uniform`).
    """

    model: dict
    c1: float
    c2: float
    c3: float
    L: float
    c4: float
    c5: float
    nu: float
    hess0: float
    H0: float
    grad0: float
    theta: float = 0.0
    K_radius: float = 0.0
    status: dict = field(default_factory=dict)
    evidence: dict = field(default_factory=dict)
    plan: dict = field(default_factory=dict)

    @property
    def M(self) -> float:
        return self.theta + self.hess0 + self.L

    @property
    def h0(self) -> float:
        return self.theta + self.H0

    @property
    def h1(self) -> float:
        return self.theta + self.grad0

    @property
    def h1_prime(self) -> float:
        return 1.0 + abs(self.c2 - self.c3) / self.c2

    @property
    def ok(self) -> bool:
        return all(s != FALSIFIED for s in self.status.values())

    def check_invariants(self) -> list[str]:
        problems = []
        for name in ("c1", "c2", "c4", "c5", "nu"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        for name in ("c3", "L"):
            if not getattr(self, name) >= 0:
                problems.append(f"{name} must be non-negative")
        if not self.M >= self.L:
            problems.append("M < L")
        if not self.theta <= self.nu / 2 + 1e-15:
            problems.append("theta > nu/2")
        return problems

    def uniform(self, K_radius: float, sup_K_liouville: float) -> "AdmissibilityCertificate":
        """Constants valid for every base + h with |h|_{C^3(K)} < theta."""
        theta = theta_radius(self, K_radius)
        return AdmissibilityCertificate(
            model=self.model, c1=self.c1, c2=self.c2,
            c3=self.c3 + theta * sup_K_liouville,
            L=self.L + theta * K_radius,
            c4=self.c4, c5=self.c5 / 2, nu=self.nu / 2,
            hess0=self.hess0, H0=self.H0, grad0=self.grad0,
            theta=theta, K_radius=float(K_radius),
            status=dict(self.status), evidence=dict(self.evidence), plan=dict(self.plan),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(schema_version=SCHEMA_VERSION, M=self.M, h0=self.h0, h1=self.h1, h1_prime=self.h1_prime)
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "AdmissibilityCertificate":
        names = cls.__dataclass_fields__.keys()
        return cls(**{k: v for k, v in d.items() if k in names})


def certify(H: HamiltonianModel, plan: SamplingPlan = SamplingPlan()) -> AdmissibilityCertificate:
    """Run the three samplers and assemble a base certificate (theta = 0)."""
    r1, r2, r3 = certify_H1(H, plan), certify_H2(H, plan), certify_H3(H, plan)
    return AdmissibilityCertificate(
        model=H.spec(),
        c1=r1.constants["c1"], c2=r1.constants["c2"], c3=r1.constants["c3"],
        L=r2.constants["L"], c4=r3.constants["c4"], c5=r3.constants["c5"], nu=r3.constants["nu"],
        hess0=r2.constants["hess0"], H0=r2.constants["H0"], grad0=r2.constants["grad0"],
        status={"H1": r1.status, "H2": r2.status, "H3": r3.status},
        evidence={"H1": r1.witness, "H2": r2.witness, "H3": r3.witness},
        plan=asdict(plan),
    )


def theta_radius(cert: AdmissibilityCertificate, K_radius: float) -> float:
    """theta = 1/2 min{nu, c5 / (c4 (K^2 + 1))}."""
    return 0.5 * min(cert.nu, cert.c5 / (cert.c4 * (K_radius**2 + 1)))


def sup_on_ball(f, dim: int, radius: float, count: int = 4000, seed: int = 0) -> float:
    """Sampled sup of |f| over the closed ball (boundary sphere included)."""
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((count, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * np.concatenate([np.ones(count // 2), rng.random(count - count // 2) ** (1.0 / dim)])
    pts = np.concatenate([r[:, None] * d, np.zeros((1, dim))])
    vals = np.asarray(f(pts))
    if vals.ndim > 1:
        vals = np.linalg.norm(vals, axis=-1)
    return float(np.max(np.abs(vals)))


@dataclass
class PerturbationBall:
    base: HamiltonianModel
    support_radius: float
    theta: float
    perturbation: Bump | None = None

    def c3_norm(self, count: int = 20000, seed: int = 0) -> float:
        if self.perturbation is None:
            return 0.0
        b = self.perturbation
        rng = np.random.default_rng(seed)
        d = rng.standard_normal((count, b.dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = b.width * rng.random(count) ** (1.0 / b.dim)
        pts = np.concatenate([b.center + r[:, None] * d, b.center[None]])
        return float(b.c3_norm(pts).max())

    def validate(self) -> list[str]:
        problems = []
        if self.perturbation is not None:
            if self.perturbation.support_radius > self.support_radius + 1e-12:
                problems.append("perturbation support leaves K")
            if not self.c3_norm() < self.theta:
                problems.append("sampled C^3 norm of the perturbation is not below theta")
        return problems

    def model(self) -> HamiltonianModel:
        return self.base if self.perturbation is None else Perturbed(self.base, self.perturbation)


def po_window_check(H: HamiltonianModel, window_n: float, orbit_set, action_fn=None) -> tuple[float, str]:
    """Radius of the smallest origin-centred ball containing the orbits with 0 < |action| <= n."""
    from .action import action as _action

    action_fn = action_fn or (lambda u: _action(H, u))
    radius = 0.0
    for u in orbit_set:
        a = action_fn(u)
        if 0 < abs(a) <= window_n:
            radius = max(radius, float(np.max(np.linalg.norm(u.samples, axis=1))))
    return radius, "evidence-within-searched-family"
