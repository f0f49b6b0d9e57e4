"""Explicit constants of the compactness argument and monitors that check them.

:func:`build_ledger` turns an admissibility certificate and an action window
``[a, b]`` into every constant used downstream.  Each entry carries its
formula and a short tag naming the estimate it comes from.  The monitors
evaluate the corresponding inequalities along solved trajectories and report
violations with witnesses instead of raising.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .action import AlmostComplexSpec, action, gradient
from .critproj import ProjectionError, closest_point, project
from .hamiltonians import AdmissibilityCertificate, HamiltonianModel, sample_level_set
from .loopspace import LoopMultiplier, l2_norm, spectral_derivative

SCHEMA_VERSION = 1
BISECT_TOL = 1e-10


# ---------------------------------------------------------------- thresholds

def _bisect_threshold(ok, lo: float, tol: float = BISECT_TOL) -> float:
    """Smallest v >= lo with ok(w) for all w >= v, assuming ok is eventually true.

    A geometric scan locates the last failing point; bisection then refines
    the switch between it and the first passing point after it.
    """
    hi = max(2.0 * lo, 1.0)
    while not ok(hi):
        hi *= 2.0
        if hi > 1e15:
            raise ValueError("threshold not found below 1e15")
    grid = lo + (np.geomspace(1.0, 1e3 * (hi - lo) + 1.0, 4000) - 1.0)
    fails = [g for g in grid if not ok(g)]
    left = fails[-1] if fails else lo
    right = next(g for g in grid if g > left and ok(g))
    while right - left > tol * max(1.0, right):
        mid = 0.5 * (left + right)
        if ok(mid):
            right = mid
        else:
            left = mid
    return right


def v0_threshold(c1, c2, c3, c4, c5) -> float:
    """Smallest v >= sqrt((2c3+c5)/(2c2)) with both near-infinity inequalities of the eta bound."""
    if c2 <= 0:
        raise ValueError("infeasible certificate: c2 <= 0")
    lo = math.sqrt((2 * c3 + c5) / (2 * c2))

    def ok(v):
        den = c2 * v * v - c3 - c5 / 2
        if den <= 0:
            return False
        return 1.0 / den <= 2.0 / c5 and c1 * c5 * (v + 1) / (2 * den) <= c4

    return _bisect_threshold(ok, lo)


def compute_eps0_ctilde(cert: AdmissibilityCertificate) -> tuple[float, float, float]:
    v0 = v0_threshold(cert.c1, cert.c2, cert.c3, cert.c4, cert.c5)
    eps0 = min(cert.c5 / 2, (cert.nu / 2) * min(1.0, 1.0 / (cert.M * v0 + cert.h1)))
    c_tilde = max(2.0 / cert.c5, cert.c4 * (v0**2 + 1))
    return eps0, c_tilde, v0


def apriori_bounds(a: float, b: float, eps0: float, c_tilde: float, J_inf: float = 1.0):
    """(frak_y, frak_a, frak_e): sup|eta|, sup|action| and energy bounds for the window [a, b]."""
    if a > b:
        raise ValueError("apriori_bounds requires a <= b")
    m = max(abs(a), abs(b))
    fy = (8.0 / 7.0) * (c_tilde * (m + 1) + ((b - a) / eps0) * J_inf**1.5)
    fa = (8 * m + 1 + abs(b - a)) / 7.0
    fe = J_inf * (8 * abs(b - a) + m + 1) / 7.0
    return fy, fa, fe


def eps1(delta: float, cert: AdmissibilityCertificate) -> float:
    return (delta / 2) * min(cert.c2 / (2 * cert.M * cert.c1), 1.0)


def v1(delta: float, frak_a: float, cert: AdmissibilityCertificate) -> float:
    """Radius beyond which both the eta chain and the d/dt chain are <= delta."""
    c1, c2, c3, M, h1 = cert.c1, cert.c2, cert.c3, cert.M, cert.h1
    k = delta * c2 / (4 * M)
    off = c3 + delta * c2 / (4 * M * c1)
    lo = math.sqrt(off / c2)

    def ok(v):
        den = c2 * v * v - off
        if den <= 0:
            return False
        q = (frak_a + k * (v + 1)) / den
        return q <= delta and delta / 2 + q * (h1 + M * v) <= delta

    return _bisect_threshold(ok, lo)


def eps1_v1(delta: float, frak_a: float, cert: AdmissibilityCertificate) -> tuple[float, float]:
    return eps1(delta, cert), v1(delta, frak_a, cert)


def _g1(r, c):
    return (c.c2 * r * r - c.c3) / (c.c1 * (r + 1))


def _g2(r, c):
    return c.c5 / (c.c4 * (r * r + 1))


def gradient_floor_near_level(cert: AdmissibilityCertificate) -> tuple[float, float]:
    """(r0, inf_r max{g1, g2}) at the crossing of the increasing g1 and decreasing g2."""
    f = lambda r: _g1(r, cert) - _g2(r, cert)  # noqa: E731
    hi = 1.0
    while f(hi) < 0:
        hi *= 2
    if f(0.0) >= 0:
        return 0.0, float(max(_g1(0.0, cert), _g2(0.0, cert)))
    r0 = brentq(f, 0.0, hi, xtol=BISECT_TOL, rtol=4 * np.finfo(float).eps)
    return float(r0), float(_g2(r0, cert))


def mu_delta(delta: float, cert: AdmissibilityCertificate) -> float:
    return min(cert.nu, delta * gradient_floor_near_level(cert)[1])


def eps2(delta: float, frak_a: float, cert: AdmissibilityCertificate, eps0: float, J_inf: float = 1.0) -> float:
    return min(eps0, eps1(delta / 4, cert), mu_delta(delta / 4, cert)) / J_inf


def v2(delta: float, r: float, frak_a: float, cert: AdmissibilityCertificate) -> float:
    return max(v1(delta / 4, frak_a, cert), r + delta / 4)


def grad_floor_radius(cert: AdmissibilityCertificate) -> float:
    """|grad H(x)| >= 1/2 whenever |x| >= this radius."""
    return cert.h1_prime + cert.c1 / (2 * cert.c2)


def alpha_constants(M: float, h1: float, L: float) -> tuple[float, float, float, float]:
    a1 = max(2 * M, 2 * h1 / 3) ** 2
    a2 = 0.5 * max(M, h1**2 / (4 * M))
    a3 = max(M * (8 * M + 2.5 * L), 0.5 * h1 * (7 * M + 3 * L))
    a4 = max(M, 0.5 * h1)
    return a1, a2, a3, a4


def level_set_grad_inf(H: HamiltonianModel, count: int = 2000, seed: int = 0, radius: float = 6.0) -> float:
    """Sampled inf of |grad H| over the zero level set inside a ball."""
    pts = sample_level_set(H, count, np.random.default_rng(seed), radius=radius)
    return float(np.min(np.linalg.norm(H.gradient(pts), axis=1)))


def nbhd_close_eps(mu: float, vbound: float, cert: AdmissibilityCertificate) -> float:
    """Gradient threshold below which |H(v(t))| < mu for every t, given |v|_{L^2} <= vbound."""
    return (mu / 2) * min(1.0, 1.0 / (cert.M * vbound + cert.h1))


# ---------------------------------------------------------------- the ledger

_FORMULAS = {
    "v0": ("smallest v >= sqrt((2c3+c5)/(2c2)) with 1/(c2 v^2-c3-c5/2) <= 2/c5 and "
           "c1 c5 (v+1)/(2c2 v^2-2c3-c5) <= c4", "eta-bound-near-critical"),
    "eps0": ("min{c5/2, (nu/2) min{1, 1/(M v0 + h1)}}", "eta-bound-near-critical"),
    "c_tilde": ("max{2/c5, c4 (v0^2 + 1)}", "eta-bound-near-critical"),
    "frak_y": ("(8/7)(c_tilde (max{|a|,|b|}+1) + ((b-a)/eps0) J_inf^(3/2))", "a-priori:eta"),
    "frak_a": ("(8 max{|a|,|b|} + 1 + |b-a|)/7", "a-priori:action"),
    "frak_e": ("J_inf (8|b-a| + max{|a|,|b|} + 1)/7", "a-priori:energy"),
    "homotopy_slope_limit": ("1/(8 (c_tilde + J_inf^(3/2)/eps0))", "a-priori:homotopy-slope"),
    "r": ("h1' + c1/(2 c2)", "gradient-growth"),
    "delta0": ("inf_Sigma |grad H| / (3M)", "tube-existence"),
    "delta": ("0.9 min{ng, 1/(6M), delta0/2} unless overridden", "tube-radius-choice"),
    "eps1": ("(delta'/2) min{c2/(2 M c1), 1} at delta' = delta/8", "far-region-smallness"),
    "v1": ("bisection on the eta and d/dt chains at delta' = delta/8", "far-region-smallness"),
    "mu_floor": ("inf_r max{(c2 r^2-c3)/(c1(r+1)), c5/(c4(r^2+1))}", "level-band"),
    "mu": ("min{nu, (delta/8) mu_floor}", "level-band"),
    "eps2": ("min{eps0, eps1(delta/8), mu(delta/8)} / J_inf", "partition"),
    "eps": ("0.9 eps2 unless overridden", "partition"),
    "v2": ("max{v1(delta/8), max(K_radius, V_radius) + delta/8}", "partition"),
    "v3": ("empirical sup |v|_inf over found orbits with action in [a, max{2b,1}] minus {0}", "orbit-ends"),
    "v4": ("max{r, v3, K_radius, v2}", "oscillations"),
    "K_max": ("2 frak_e/(delta eps) + 1", "oscillation-count"),
    "gap_sum_max": ("frak_e/eps", "oscillation-count"),
    "dwell_max": ("frak_e/eps^2", "oscillation-count"),
    "M_hat": ("72 M", "projection-drift"),
    "l2_bound": ("frak_y + v4 + sqrt(frak_e) + 4 M_hat frak_a + 5(frak_e/eps + delta)", "global-l2"),
    "K1_dt_bound": ("eps2 + frak_y (h1 + M max{v2, v3})", "partition"),
    "alpha1": ("max{2M, 2h1/3}^2", "elliptic-source-growth"),
    "alpha2": ("max{M, h1^2/(4M)}/2", "elliptic-source-growth"),
    "alpha3": ("max{M(8M + 5L/2), h1(7M + 3L)/2}", "elliptic-source-growth"),
    "alpha4": ("max{M, h1/2}", "elliptic-source-growth"),
}


@dataclass
class BoundLedger:
    inputs: dict
    values: dict
    notes: list = field(default_factory=list)

    def __getattr__(self, name):
        values = self.__dict__.get("values", {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    @property
    def cert(self) -> AdmissibilityCertificate:
        return AdmissibilityCertificate.from_dict(self.inputs["certificate"])

    def recompute(self) -> "BoundLedger":
        i = self.inputs
        return build_ledger(self.cert, i["a"], i["b"], J_inf=i["J_inf"], ng=i["ng"], K_radius=i["K_radius"],
                            V_radius=i["V_radius"], v3=i["v3"], inf_grad_sigma=i["inf_grad_sigma"],
                            delta=i["delta_override"], eps=i["eps_override"])

    def check_invariants(self) -> list[str]:
        v = self.values
        problems = []
        if not v["eps0"] <= self.inputs["certificate"]["c5"] / 2:
            problems.append("eps0 > c5/2")
        if not v["delta"] < min(self.inputs["ng"], 1 / (6 * v["M"]), v["delta0"]):
            problems.append("delta violates the tube-radius bound")
        if not v["K_max"] >= 1:
            problems.append("K_max < 1")
        if not v["eps"] < v["eps2"] or v["eps"] <= 0:
            problems.append("eps must lie in (0, eps2)")
        again = self.recompute()
        for k, x in self.values.items():
            if again.values[k] != x:
                problems.append(f"{k} does not reproduce")
        return problems

    def to_dict(self) -> dict:
        consts = {}
        for k, x in self.values.items():
            formula, tag = _FORMULAS.get(k, ("certificate constant", "certificate"))
            consts[k] = {"value": x, "formula": formula, "tag": tag}
        return {"schema_version": SCHEMA_VERSION, "inputs": self.inputs, "constants": consts, "notes": self.notes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "BoundLedger":
        return cls(d["inputs"], {k: e["value"] for k, e in d["constants"].items()}, d.get("notes", []))


def build_ledger(cert: AdmissibilityCertificate, a: float, b: float, J_inf: float = 1.0, ng: float = 1.0,
                 K_radius: float = 0.0, V_radius: float = 0.0, v3: float = 0.0, inf_grad_sigma: float | None = None,
                 delta: float | None = None, eps: float | None = None) -> BoundLedger:
    """Every constant for the window [a, b].

    ``inf_grad_sigma`` is the infimum of |grad H| on the level set; it sets
    the tube radius delta0.  ``delta`` and ``eps`` override the defaults.
    """
    if inf_grad_sigma is None:
        raise ValueError("inf_grad_sigma is required (see level_set_grad_inf)")
    M, h1 = cert.M, cert.h1
    eps0, c_tilde, v0 = compute_eps0_ctilde(cert)
    fy, fa, fe = apriori_bounds(a, b, eps0, c_tilde, J_inf)
    r = grad_floor_radius(cert)
    delta0 = inf_grad_sigma / (3 * M)
    d = 0.9 * min(ng, 1 / (6 * M), delta0 / 2) if delta is None else float(delta)
    dp = d / 2  # partition scale
    e1 = eps1(dp / 4, cert)
    vv1 = v1(dp / 4, fa, cert)
    r0, floor = gradient_floor_near_level(cert)
    mu = min(cert.nu, (dp / 4) * floor)
    e2 = min(eps0, e1, mu) / J_inf
    e = 0.9 * e2 if eps is None else float(eps)
    vv2 = max(vv1, max(K_radius, V_radius) + dp / 4)
    vv4 = max(r, v3, K_radius, vv2)
    M_hat = 72 * M
    a1, a2, a3, a4 = alpha_constants(M, h1, cert.L)
    values = {
        "c1": cert.c1, "c2": cert.c2, "c3": cert.c3, "c4": cert.c4, "c5": cert.c5, "nu": cert.nu,
        "L": cert.L, "M": M, "h1": h1, "h1_prime": cert.h1_prime,
        "v0": v0, "eps0": eps0, "c_tilde": c_tilde,
        "frak_y": fy, "frak_a": fa, "frak_e": fe,
        "homotopy_slope_limit": 1.0 / (8 * (c_tilde + J_inf**1.5 / eps0)),
        "r": r, "delta0": delta0, "delta": d,
        "eps1": e1, "v1": vv1, "mu_floor": floor, "mu_crossing": r0, "mu": mu,
        "eps2": e2, "eps": e, "v2": vv2, "v3": float(v3), "v4": vv4,
        "K_max": 2 * fe / (d * e) + 1, "gap_sum_max": fe / e, "dwell_max": fe / e**2,
        "M_hat": M_hat,
        "l2_bound": fy + vv4 + math.sqrt(fe) + 4 * M_hat * fa + 5 * (fe / e + d),
        "K1_dt_bound": e2 + fy * (h1 + M * max(vv2, v3)),
        "alpha1": a1, "alpha2": a2, "alpha3": a3, "alpha4": a4,
    }
    inputs = {
        "certificate": cert.to_dict(), "a": float(a), "b": float(b), "J_inf": float(J_inf), "ng": float(ng),
        "K_radius": float(K_radius), "V_radius": float(V_radius), "v3": float(v3),
        "inf_grad_sigma": float(inf_grad_sigma), "delta_override": delta, "eps_override": eps,
    }
    notes = ["v3 is measured over the orbits that were found, not over all orbits"]
    return BoundLedger(inputs, values, notes)


# ---------------------------------------------------------------- the set B and the partition

def _models_on_unit_interval(hom, count: int = 11):
    from .flow import HomotopySpec

    if isinstance(hom, HamiltonianModel):
        hom = HomotopySpec.constant(hom)
    if hom.is_constant:
        return hom, [hom.H0]
    return hom, [hom.model_at(s) for s in np.linspace(0.0, 1.0, count)]


def in_B(hom, u: LoopMultiplier, frak_a: float, frak_y: float, eps: float, s_count: int = 11) -> bool:
    """|eta| <= frak_y and some H_s (s in [0,1]) has |A| <= frak_a and |grad A| <= eps."""
    if abs(u.eta) > frak_y:
        return False
    hom, models = _models_on_unit_interval(hom, s_count)
    for H in models:
        if abs(action(H, u)) <= frak_a and gradient(H, u, hom.J).norm() <= eps:
            return True
    return False


@dataclass
class PartitionResult:
    region: str  # "K1", "U1" or "outside"
    l2: float
    details: dict
    violations: list


def w12_distance_to_critical(H: HamiltonianModel, u: LoopMultiplier) -> float:
    """W^{1,2} x R distance from u to the constant loops on the level set."""
    m = u.samples.mean(axis=0)
    c, _ = closest_point(H, m)
    return l2_norm(u.samples - c) + l2_norm(spectral_derivative(u.samples, axis=0)) + abs(u.eta)


def partition(u: LoopMultiplier, ledger: BoundLedger, hom, delta: float | None = None,
              check_membership: bool = True) -> PartitionResult:
    """Classify a point of B as bounded (K1) or near the unbounded critical set (U1)."""
    hom, models = _models_on_unit_interval(hom)
    dp = ledger.delta / 2 if delta is None else delta
    l2 = l2_norm(u.samples)
    if check_membership and not in_B(hom, u, ledger.frak_a, ledger.frak_y, ledger.eps):
        return PartitionResult("outside", l2, {}, [])
    violations = []
    if l2 >= ledger.v2:
        H = hom.H0
        try:
            dist = w12_distance_to_critical(H, u)
        except ProjectionError:
            dist = float("inf")
        rmin = float(np.min(np.linalg.norm(u.samples, axis=1)))
        r_req = max(ledger.inputs["K_radius"], ledger.inputs["V_radius"])
        if not dist < dp:
            violations.append({"check": "distance to critical set < delta", "value": dist, "bound": dp})
        if rmin < r_req:
            violations.append({"check": "|v(t)| >= r", "value": rmin, "bound": r_req})
        return PartitionResult("U1", l2, {"distance": dist, "min_pointwise_norm": rmin}, violations)
    dt = l2_norm(spectral_derivative(u.samples, axis=0))
    if abs(u.eta) > ledger.frak_y:
        violations.append({"check": "|eta| <= frak_y", "value": abs(u.eta), "bound": ledger.frak_y})
    if dt > ledger.K1_dt_bound:
        violations.append({"check": "|dv/dt| bound", "value": dt, "bound": ledger.K1_dt_bound})
    return PartitionResult("K1", l2, {"dt_norm": dt}, violations)


# ---------------------------------------------------------------- trajectory monitors

@dataclass
class MonitorReport:
    name: str
    passed: bool
    values: dict
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "values": self.values, "violations": self.violations}


def apriori_monitor(traj, ledger: BoundLedger) -> MonitorReport:
    """sup|eta| <= frak_y, sup|action| <= frak_a and energy <= frak_e along a trajectory."""
    eta = float(np.max(np.abs(traj.eta)))
    act = float(np.max(np.abs(traj.action_trace())))
    energy = traj.energy(metric="euclidean")
    slack = max(traj.residual, 0.0) * (traj.s_grid[-1] - traj.s_grid[0]) if np.isfinite(traj.residual) else 0.0
    viol = []
    if eta > ledger.frak_y:
        viol.append({"check": "sup|eta|", "value": eta, "bound": ledger.frak_y})
    if act > ledger.frak_a:
        viol.append({"check": "sup|action|", "value": act, "bound": ledger.frak_a})
    if energy > ledger.frak_e + slack:
        viol.append({"check": "energy", "value": energy, "bound": ledger.frak_e})
    vals = {"sup_eta": eta, "sup_action": act, "energy": energy,
            "frak_y": ledger.frak_y, "frak_a": ledger.frak_a, "frak_e": ledger.frak_e}
    if not traj.homotopy.is_constant:
        from .flow import homotopy_condition

        ok = homotopy_condition(traj.homotopy, ledger.c_tilde, ledger.eps0, ledger.inputs["J_inf"])
        vals["homotopy_slope"] = traj.homotopy.ds_H_inf
        vals["homotopy_slope_limit"] = ledger.homotopy_slope_limit
        if not ok:
            viol.append({"check": "homotopy slope precondition", "value": traj.homotopy.ds_H_inf,
                         "bound": ledger.homotopy_slope_limit})
    return MonitorReport("apriori", not viol, vals, viol)


@dataclass
class NodeClasses:
    in_B: np.ndarray
    in_K0: np.ndarray
    in_N: np.ndarray


def classify_nodes(traj, ledger: BoundLedger, eps: float | None = None, delta: float | None = None) -> NodeClasses:
    eps = ledger.eps if eps is None else eps
    delta = ledger.delta if delta is None else delta
    hom = traj.homotopy
    S = traj.nodes
    inB = np.zeros(S, bool)
    inK0 = np.zeros(S, bool)
    inN = np.zeros(S, bool)
    for i in range(S):
        u = traj.state(i)
        inB[i] = in_B(hom, u, ledger.frak_a, ledger.frak_y, eps)
        inK0[i] = abs(u.eta) <= ledger.frak_y and l2_norm(u.samples) <= ledger.v4 + delta
        try:
            tc = project(u, traj.model(i))
            inN[i] = tc.radius < delta and np.linalg.norm(tc.base) >= ledger.v4
        except ProjectionError:
            inN[i] = False
    return NodeClasses(inB, inK0, inN)


def _first(mask, start):
    idx = np.nonzero(mask[start:])[0]
    return None if len(idx) == 0 else start + int(idx[0])


def tau_sequence(classes: NodeClasses, end: int):
    """Indices (tau1, [(tau_k^-, tau_k^+), ...]) of the oscillation sequence for s = s_grid[end]."""
    K0, N, B = classes.in_K0[: end + 1], classes.in_N[: end + 1], classes.in_B[: end + 1]
    where = np.nonzero(K0)[0]
    tau1 = int(where[-1]) if len(where) else 0
    outside = ~(K0 | N)
    pairs = []
    m = _first(outside, tau1)
    while m is not None:
        p = _first(B, m)
        pairs.append((m, p))
        if p is None:
            break
        m = _first(outside, p + 1)
    return tau1, pairs


def _dist_quadratic(traj, i, j) -> float:
    dv = traj.v[i] - traj.v[j]
    return float(np.sqrt(np.mean(np.sum(dv * dv, axis=1)) + (traj.eta[i] - traj.eta[j]) ** 2))


def oscillation_audit(traj, ledger: BoundLedger, eps: float | None = None, delta: float | None = None,
                      classes: NodeClasses | None = None) -> MonitorReport:
    """Oscillation count, the sum of crossing lengths, and the time spent outside B."""
    eps = ledger.eps if eps is None else eps
    delta = ledger.delta if delta is None else delta
    classes = classes or classify_nodes(traj, ledger, eps, delta)
    fe = ledger.frak_e
    K_bound = 2 * fe / (delta * eps) + 1
    gap_bound = fe / eps
    dwell_bound = fe / eps**2
    worst_K, worst_gap, worst_seq = 1, 0.0, None
    for end in range(traj.nodes):
        tau1, pairs = tau_sequence(classes, end)
        K = 1 + len(pairs)
        gap = sum(_dist_quadratic(traj, p, m) for m, p in pairs if p is not None)
        if K > worst_K or gap > worst_gap:
            worst_seq = {"s": float(traj.s_grid[end]), "tau1": float(traj.s_grid[tau1]),
                         "pairs": [[float(traj.s_grid[m]), None if p is None else float(traj.s_grid[p])]
                                   for m, p in pairs]}
        worst_K, worst_gap = max(worst_K, K), max(worst_gap, gap)
    ds = np.diff(traj.s_grid)
    out = (~classes.in_B).astype(float)
    dwell = float(np.sum(ds * 0.5 * (out[:-1] + out[1:])))
    viol = []
    if worst_K > K_bound:
        viol.append({"check": "oscillation count", "value": worst_K, "bound": K_bound, "witness": worst_seq})
    if worst_gap > gap_bound:
        viol.append({"check": "gap sum", "value": worst_gap, "bound": gap_bound, "witness": worst_seq})
    if dwell > dwell_bound:
        runs = _runs(~classes.in_B)
        viol.append({"check": "dwell outside B", "value": dwell, "bound": dwell_bound,
                     "intervals": [[float(traj.s_grid[i]), float(traj.s_grid[j])] for i, j in runs]})
    vals = {"K": worst_K, "K_bound": K_bound, "gap_sum": worst_gap, "gap_bound": gap_bound,
            "dwell": dwell, "dwell_bound": dwell_bound, "sequence": worst_seq,
            "nodes_in_B": int(classes.in_B.sum()), "nodes": traj.nodes}
    return MonitorReport("oscillation", not viol, vals, viol)


def _runs(mask):
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


def l2_global_bound(traj, ledger: BoundLedger, eps: float | None = None) -> MonitorReport:
    """Closed-form bound on |u(s)|_{L^2 x R} checked at every node."""
    eps = ledger.eps if eps is None else eps
    bound = (ledger.frak_y + ledger.v4 + math.sqrt(ledger.frak_e) + 4 * ledger.M_hat * ledger.frak_a
             + 5 * (ledger.frak_e / eps + ledger.delta))
    norms = np.sqrt(np.mean(np.sum(traj.v**2, axis=2), axis=1) + traj.eta**2)
    worst = float(norms.max()) if len(norms) else 0.0
    bad = np.nonzero(norms > bound)[0]
    viol = []
    if len(bad):
        viol.append({"check": "global L2 bound", "first_s": float(traj.s_grid[bad[0]]),
                     "value": float(norms[bad[0]]), "bound": bound})
    return MonitorReport("l2_global", not viol, {"bound": bound, "sup_norm": worst,
                                                 "slack_ratio": bound / worst if worst > 0 else float("inf")}, viol)


# ---------------------------------------------------------------- sampling near critical points

def sample_near_critical(H: HamiltonianModel, components, eps: float, count: int, rng,
                         modes: int = 4, J: AlmostComplexSpec | None = None):
    """Random pairs with |grad A| < eps, made by perturbing critical points along random smooth directions."""
    out = []
    comps = list(components)
    while len(out) < count:
        c = comps[rng.integers(len(comps))]
        u0 = c.representative
        N, d = u0.samples.shape
        t = np.arange(N) / N
        w = np.zeros((N, d))
        for k in range(modes + 1):
            a, b = rng.standard_normal(d), rng.standard_normal(d)
            w += (a * np.cos(2 * np.pi * k * t)[:, None] + b * np.sin(2 * np.pi * k * t)[:, None]) / (1 + k * k)
        sig = rng.standard_normal()
        if c.kind.startswith("constant"):
            # slide along the level set too, to cover the non-compact direction
            base, _ = closest_point(H, u0.samples[0] + rng.standard_normal(d) * rng.uniform(0, 5))
            u0 = LoopMultiplier(np.tile(base, (N, 1)), 0.0)
        scale = l2_norm(w) + abs(sig)
        w, sig = w / scale, sig / scale
        target = eps * rng.uniform(0.05, 0.999)

        def g(x):
            return gradient(H, LoopMultiplier(u0.samples + x * w, u0.eta + x * sig), J).norm() - target

        hi = 1e-3
        while g(hi) < 0 and hi < 1e3:
            hi *= 2
        x = brentq(g, 0.0, hi, xtol=1e-14) if g(hi) > 0 else hi
        u = LoopMultiplier(u0.samples + x * w, u0.eta + x * sig)
        if gradient(H, u, J).norm() < eps:
            out.append(u)
    return out
