import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rabiflow.bounds import build_ledger
from rabiflow.flow import FloerTrajectory, HomotopySpec
from rabiflow.hamiltonians import build_model, certify
from rabiflow.loopspace import standard_j
from rabiflow.maxprinciple import (
    F,
    alpha_check,
    alpha_constants,
    discretisation_tolerance,
    elliptic_audit,
    f1_f2,
    grad_f2,
    heatmap_rows,
    k_infinity_radius,
    label_periodic,
    laplacian_fd,
    laplacian_spectral_t,
    psh_residual,
    source_term,
)

MODELS = [
    {"name": "sphere", "n": 1},
    {"name": "sphere", "n": 2},
    {"name": "shifted_sphere", "center": [0.5, -0.3]},
    {"name": "quadratic_form", "matrix": [[2.0, 0.0], [0.0, 1.0]]},
    {"name": "sphere_plus_bump", "bump_width": 1.0, "bump_amplitude": 1e-4},
]


def fd_grad(fun, x, h=1e-6):
    out = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


def f1_oracle(H, x):
    """f1 assembled term by term, with the two inner gradients taken by finite differences."""
    J0 = standard_j(H.n)
    XH = lambda y: J0 @ H.gradient(y)  # noqa: E731
    dF = lambda y: 0.5 * y  # noqa: E731
    phi = lambda y: dF(y) @ XH(y)  # noqa: E731
    psi = lambda y: dF(y) @ (J0 @ XH(y))  # noqa: E731
    gphi, gpsi = fd_grad(phi, x), fd_grad(psi, x)
    return gphi @ XH(x) - H.gradient(x) @ H.gradient(x) - gpsi @ gpsi - gphi @ gphi, psi(x)


@pytest.mark.parametrize("spec", MODELS, ids=lambda s: s["name"] + str(s.get("n", "")))
def test_f1_f2_match_term_by_term_oracle(spec):
    H = build_model(spec)
    rng = np.random.default_rng(5)
    for _ in range(50):
        x = rng.standard_normal(H.dim) * 2
        f1, f2 = f1_f2(H, x)
        o1, o2 = f1_oracle(H, x)
        assert f1 == pytest.approx(o1, rel=1e-6, abs=1e-6)
        assert f2 == pytest.approx(o2, rel=1e-12, abs=1e-12)


def test_f2_on_sphere(sphere):
    rng = np.random.default_rng(6)
    x = rng.standard_normal((100, 2)) * 3
    _, f2 = f1_f2(sphere, x)
    assert np.allclose(f2, -np.sum(x * x, axis=1) / 2)
    assert f1_f2(sphere, np.zeros(2))[1] == 0


def test_grad_f2_matches_fd(sphere):
    H = build_model(MODELS[3])
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.standard_normal(2)
        assert np.allclose(grad_f2(H, x), fd_grad(lambda y: f1_f2(H, y)[1], x), atol=1e-8)


def test_alpha_examples():
    assert alpha_constants(1.0, 0.0, 0.0) == pytest.approx((4, 0.5, 8, 1))
    M = 1.0
    below = alpha_constants(M, 1.9 * M, 0.0)[1]
    above = alpha_constants(M, 2.1 * M, 0.0)[1]
    assert below == pytest.approx(0.5 * M)
    assert above == pytest.approx(0.5 * (2.1 * M) ** 2 / (4 * M))


@pytest.mark.parametrize("spec", MODELS, ids=lambda s: s["name"] + str(s.get("n", "")))
def test_alpha_bounds_sampled(spec):
    H = build_model(spec)
    c = certify(H)
    rep = alpha_check(H, alpha_constants(c.M, c.h1, c.L), count=10_000)
    assert rep.passed, rep.violations


def test_alpha_sampler_detects_violation(sphere):
    rep = alpha_check(sphere, (0.1, 0.1, 0.1, 0.1), count=500)
    assert not rep.passed and {v["bound"] for v in rep.violations} == {"f1", "f2", "grad_f1", "grad_f2"}


@pytest.mark.parametrize("n", [1, 2, 3])
def test_plurisubharmonic(n):
    assert psh_residual(n, count=200) < 1e-12


def test_laplacian_on_polynomials():
    s = np.linspace(-1, 1, 21)
    N = 16
    t = np.arange(N) / N
    Fsv = 3 * s[:, None] ** 2 + 0 * t
    lap = laplacian_fd(Fsv, s)
    assert np.all(np.isnan(lap[[0, -1]]))
    assert np.allclose(lap[1:-1], 6.0, atol=1e-10)
    Fsv = s[:, None] ** 2 + np.cos(2 * np.pi * t)[None, :]
    spec = laplacian_spectral_t(Fsv, s)
    assert np.allclose(spec[1:-1], 2 - 4 * np.pi**2 * np.cos(2 * np.pi * t)[None, :], atol=1e-9)
    fd = laplacian_fd(Fsv, s)
    assert np.abs(fd - spec)[1:-1].max() < 4 * np.pi**2 * (2 * np.pi / N) ** 2 / 12 * 1.1


def test_laplacian_rejects_uneven_grid():
    with pytest.raises(ValueError):
        laplacian_fd(np.zeros((4, 8)), np.array([0.0, 1.0, 3.0, 4.0]))


def test_label_periodic_merges_across_t():
    m = np.zeros((6, 8), bool)
    m[1:3, 0] = True
    m[1:3, 7] = True
    m[4, 3:5] = True
    lab, n = label_periodic(m)
    assert n == 2
    assert lab[1, 0] == lab[1, 7] != lab[4, 3]
    assert label_periodic(np.zeros((3, 4), bool))[1] == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_label_periodic_is_invariant_under_rotation(seed):
    rng = np.random.default_rng(seed)
    m = rng.random((7, 10)) < 0.4
    shift = int(rng.integers(10))
    assert label_periodic(m)[1] == label_periodic(np.roll(m, shift, axis=1))[1]


def holomorphic_cylinder(coeffs, s, N):
    t = np.arange(N) / N
    z = s[:, None] + 1j * t[None, :]
    w = sum(a * np.exp(2 * np.pi * k * z) for k, a in coeffs.items())
    return np.stack([w.real, w.imag], axis=-1)


def test_holomorphic_cylinder_is_subharmonic(sphere_ledger):
    s = np.linspace(-0.5, 0.4, 91)
    v = holomorphic_cylinder({0: 0.5, 1: 1.0, 2: 0.02, -1: 0.3}, s, 64)
    zero = build_model({"name": "zero"})
    tr = FloerTrajectory(s, v, np.zeros(len(s)), HomotopySpec.constant(zero))
    assert np.all(source_term(tr) == 0)
    rep = elliptic_audit(tr, 0.0, sphere_ledger)
    assert len(rep.patches) == 1
    assert rep.patches[0].min_margin >= 0
    lap = laplacian_fd(F(v), s)
    assert np.nanmin(lap) >= -rep.tol_round


def test_vacuous_audit(small_traj, sphere_ledger):
    rep = elliptic_audit(small_traj, 100.0, sphere_ledger)
    assert rep.passed and rep.patches == []


def test_audit_on_small_radius(small_traj, sphere_ledger, refinement_levels):
    t01, t12, ratio = discretisation_tolerance(refinement_levels)
    assert ratio >= 3
    rep = elliptic_audit(small_traj, 1.3, sphere_ledger, tol_disc=t01)
    assert rep.patches and rep.passed
    for p in rep.patches:
        assert p.s_range[1] - p.s_range[0] <= sphere_ledger.dwell_max
        assert p.l1_f <= p.budgets["f"]
    d = rep.to_dict()
    assert d["tol_disc"] == t01 and len(d["patches"]) == len(rep.patches)


def test_audit_reports_witness(small_traj, sphere_ledger):
    # an absurd negative tolerance forces failure, which must come with a node witness
    rep = elliptic_audit(small_traj, 1.3, sphere_ledger, tol_disc=-1e6)
    assert not rep.passed
    w = [p.witness for p in rep.patches if p.witness]
    assert w and {"s", "t", "laplacian", "f"} <= set(w[0])


def test_discretisation_tolerance_needs_nested_grids(small_traj, big_traj):
    with pytest.raises(ValueError):
        discretisation_tolerance([small_traj, big_traj, big_traj])


def test_k_infinity_radius(sphere_cert, small_traj, sphere_ledger):
    L = build_ledger(sphere_cert, 0.0, 2 * np.pi, K_radius=2.0, V_radius=0.5, inf_grad_sigma=np.sqrt(2))
    assert k_infinity_radius([], L) == pytest.approx(2.2)
    r = k_infinity_radius([small_traj], sphere_ledger)
    assert 1.1 * np.sqrt(2) - 1e-6 <= r <= 1.1 * (np.sqrt(2) + sphere_ledger.delta)
    far = build_ledger(sphere_cert, 0.0, 2 * np.pi, V_radius=10.0, inf_grad_sigma=np.sqrt(2))
    assert k_infinity_radius([small_traj], far) == pytest.approx(11.0)


def test_heatmap_rows(small_traj):
    rows = list(heatmap_rows(small_traj))
    assert len(rows) == small_traj.nodes * small_traj.v.shape[1]
    assert rows[0][0] == small_traj.s_grid[0] and rows[1][1] == pytest.approx(1 / 32)
