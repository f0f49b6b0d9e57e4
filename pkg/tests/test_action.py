import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rabiflow.action import (
    AlmostComplexSpec,
    action,
    action_alt_primitive,
    dHY_identity_residual,
    differential,
    gradient,
    hessian_apply,
    metric,
    pairing,
)
from rabiflow.hamiltonians import build_model
from rabiflow.loopspace import Loop, LoopMultiplier, TangentVector, l2r_norm, omega_matrix, standard_j

TAU = 2 * np.pi
SPECS = [
    {"name": "sphere", "n": 1},
    {"name": "sphere", "n": 2},
    {"name": "shifted_sphere", "center": [0.5, -0.3]},
    {"name": "quadratic_form", "matrix": [[2.0, 0.0], [0.0, 1.0]]},
    {"name": "sphere_plus_bump", "bump_width": 1.0, "bump_amplitude": 0.05},
    {"name": "quartic"},
]


def smooth_loop(rng, N, d, modes=4, scale=1.0):
    t = np.arange(N) / N
    x = rng.standard_normal(d) * scale
    x = np.tile(x, (N, 1))
    for k in range(1, modes + 1):
        x = x + np.outer(np.cos(TAU * k * t), rng.standard_normal(d)) / k**2
        x = x + np.outer(np.sin(TAU * k * t), rng.standard_normal(d)) / k**2
    return x


def random_pair(rng, H, N=32):
    return LoopMultiplier(Loop(smooth_loop(rng, N, H.dim)), float(rng.normal(0, 3)))


def random_tangent(rng, H, N=32):
    return TangentVector(smooth_loop(rng, N, H.dim), float(rng.standard_normal()))


def orbit(k=1, N=64):
    t = np.arange(N) / N
    v = np.sqrt(2) * np.stack([np.cos(TAU * k * t), np.sin(TAU * k * t)], 1)
    return LoopMultiplier(Loop(v), TAU * k)


def test_action_examples(sphere):
    assert action(sphere, LoopMultiplier(Loop.constant([np.sqrt(2), 0.0], 16), 3.0)) == pytest.approx(0, abs=1e-14)
    for k in (1, 2, 3):
        assert action(sphere, orbit(k)) == pytest.approx(TAU * k, abs=1e-8)
        assert gradient(sphere, orbit(k)).norm() < 1e-7


def test_gradient_examples(sphere):
    p = np.array([2.0, 1.0])
    g = gradient(sphere, LoopMultiplier(Loop.constant(p, 16), 0.0))
    assert np.abs(g.v_part).max() == 0
    assert g.eta_part == pytest.approx(-sphere.value(p))


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s["name"])
def test_gradient_matches_finite_differences(spec):
    H = build_model(spec)
    rng = np.random.default_rng(11)
    for _ in range(25):
        u, w = random_pair(rng, H), random_tangent(rng, H)
        h = 1e-6
        fd = (action(H, u.shifted(h * w.xi, h * w.sigma)) - action(H, u.shifted(-h * w.xi, -h * w.sigma))) / (2 * h)
        an = differential(H, u, w)
        assert an == pytest.approx(fd, rel=1e-5, abs=1e-7)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s["name"])
def test_hessian_matches_finite_differences(spec):
    H = build_model(spec)
    rng = np.random.default_rng(12)
    for _ in range(10):
        u, w = random_pair(rng, H), random_tangent(rng, H)
        h = 1e-5
        gp = gradient(H, u.shifted(h * w.xi, h * w.sigma)).as_tangent()
        gm = gradient(H, u.shifted(-h * w.xi, -h * w.sigma)).as_tangent()
        fd = (gp - gm) * (1 / (2 * h))
        an = hessian_apply(H, u, w)
        assert l2r_norm(an - fd) <= 1e-4 * max(1.0, l2r_norm(an))


def test_hessian_symmetry(sphere):
    H = build_model(SPECS[4])
    rng = np.random.default_rng(13)
    for _ in range(20):
        u, a, b = random_pair(rng, H), random_tangent(rng, H), random_tangent(rng, H)
        assert pairing(hessian_apply(H, u, a), b) == pytest.approx(pairing(a, hessian_apply(H, u, b)), abs=1e-10)


def test_hessian_kernel_on_sigma(sphere):
    x = np.array([1.0, 1.0])
    u = LoopMultiplier(Loop.constant(x, 16), 0.0)
    tangent = np.array([-1.0, 1.0]) / np.sqrt(2)
    out = hessian_apply(sphere, u, TangentVector(np.tile(tangent, (16, 1)), 0.0))
    assert l2r_norm(out) < 1e-12
    s = 0.7
    out = hessian_apply(sphere, u, TangentVector(np.zeros((16, 2)), s))
    assert np.allclose(out.xi, s * sphere.vector_field(x) @ standard_j(1).T)
    assert out.sigma == 0


def test_hessian_rejects_nonstandard_j(sphere):
    J = AlmostComplexSpec(1, [3.0, 0.0], 1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        hessian_apply(sphere, orbit(), TangentVector(np.zeros((64, 2)), 0.0), J)


@pytest.mark.parametrize("spec", SPECS[:5], ids=lambda s: s["name"])
def test_liouville_identity(spec):
    H = build_model(spec)
    rng = np.random.default_rng(14)
    for _ in range(30):
        u = random_pair(rng, H)
        assert dHY_identity_residual(H, u, H.liouville_global) < 1e-8
        assert dHY_identity_residual(H, u, H.liouville_local) < 1e-8


def test_identity_on_orbit(sphere):
    u = orbit()
    assert dHY_identity_residual(sphere, u, sphere.liouville_global) < 1e-9
    Y = sphere.liouville_global(u.samples)
    rhs = u.eta * np.mean(np.sum(sphere.gradient(u.samples) * Y, axis=1))
    assert rhs == pytest.approx(TAU)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_primitive_independence(seed):
    H = build_model({"name": "sphere", "n": 2})
    u = random_pair(np.random.default_rng(seed), H)
    assert action(H, u) == pytest.approx(action_alt_primitive(H, u), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_almost_complex_structure(seed):
    rng = np.random.default_rng(seed)
    J = AlmostComplexSpec(1, [2.0, 0.0], 1.0, 0.8, 1.0)
    Om = omega_matrix(1)
    x = rng.standard_normal(2) * 2 + np.array([2.0, 0.0])
    eta = rng.uniform(-5, 5)
    Jm = J.matrix(x, eta)
    assert np.allclose(Jm @ Jm, -np.eye(2), atol=1e-10)
    v = rng.standard_normal(2)
    assert v @ Om @ (Jm @ v) > 0
    if abs(eta) <= J.ng or np.linalg.norm(x - J.region_center) >= J.region_radius:
        assert np.allclose(Jm, standard_j(1))


def test_metric_sandwich():
    rng = np.random.default_rng(15)
    J = AlmostComplexSpec(1, [1.5, 0.0], 1.0, 0.8, 1.0)
    Jinf = J.norm_inf()
    assert Jinf >= 1
    for _ in range(30):
        t = np.arange(32) / 32
        v = np.stack([1.5 + 0.5 * np.cos(TAU * t), 0.5 * np.sin(TAU * t)], 1)
        u = LoopMultiplier(Loop(v), 5.0)
        a = random_tangent(rng, build_model({"name": "sphere"}))
        q = pairing(a, a)
        g = metric(J, u, a, a)
        assert q / Jinf - 1e-12 <= g <= Jinf * q + 1e-12
