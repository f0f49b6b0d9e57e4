import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TWO_PI, shooting_period
from rabiflow.action import AlmostComplexSpec, action, gradient
from rabiflow.bounds import apriori_monitor
from rabiflow.flow import (
    CONSTANT,
    ORBIT,
    BVPOptions,
    CriticalComponent,
    FloerTrajectory,
    HomotopySpec,
    SolverError,
    circle_seed,
    constant_component,
    constant_trajectory,
    find_orbit,
    homotopy_condition,
    integrate_explore,
    novikov_window,
    orbit_family,
    refine,
    smoothstep,
    smoothstep_slope,
    solve_bvp,
)
from rabiflow.hamiltonians import Bump, build_model
from rabiflow.loopspace import Loop, LoopMultiplier


def test_orbit_from_rough_seed(sphere):
    c = find_orbit(sphere, circle_seed(1.3, 1, eta=6.0, N=32))
    assert c.kind == ORBIT
    assert c.representative.eta == pytest.approx(TWO_PI, abs=1e-8)
    assert c.action_value == pytest.approx(TWO_PI, abs=1e-8)


def test_double_cover(sphere):
    c = find_orbit(sphere, circle_seed(1.4, 2, eta=12.0, N=32))
    assert c.representative.eta == pytest.approx(2 * TWO_PI, abs=1e-8)
    assert c.action_value == pytest.approx(2 * TWO_PI, abs=1e-8)


def test_constant_seed_is_fixed(sphere):
    p = np.array([1.0, 1.0])
    seed = LoopMultiplier(Loop.constant(p, 16), 0.0)
    c = find_orbit(sphere, seed)
    assert c.kind == CONSTANT and c.iterations == 0
    assert np.array_equal(c.representative.samples, seed.samples)


def test_orbit_finder_fixed_point(sphere):
    c = find_orbit(sphere, circle_seed(1.3, 1, eta=6.0, N=32))
    again = find_orbit(sphere, c.representative)
    assert np.abs(again.representative.samples - c.representative.samples).max() < 1e-10
    assert again.representative.eta == pytest.approx(c.representative.eta, abs=1e-10)


def test_shooting_oracle_agrees(sphere):
    for c in orbit_family(sphere, ks=(1, 2), N=32):
        x0 = c.representative.samples[0]
        # rotate the start onto the q-axis so the oracle's bracket applies
        x0 = np.array([np.linalg.norm(x0), 0.0])
        k = round(c.representative.eta / TWO_PI)
        eta, _ = shooting_period(sphere, x0, k)
        assert c.representative.eta == pytest.approx(eta, abs=1e-8)


def test_orbit_failure_is_reported(sphere):
    with pytest.raises(SolverError):
        find_orbit(sphere, circle_seed(1.0, 1, eta=3.0, N=16), maxiter=1)


def test_component_serialisation(sphere):
    c = constant_component(sphere, [3.0, 0.0], 16)
    assert c.kind == CONSTANT and c.grad_norm < 1e-12
    back = CriticalComponent.from_dict(c.to_dict())
    assert np.array_equal(back.representative.samples, c.representative.samples)


def test_novikov_window():
    assert novikov_window(0, 0) == (-1, 1)
    assert novikov_window(-3, 5) == (-6, 10)
    assert novikov_window(2, 2) == (-1, 4)
    with pytest.raises(ValueError):
        novikov_window(1, 0)


def test_homotopy_condition(sphere, sphere_ledger):
    L = sphere_ledger
    assert homotopy_condition(HomotopySpec.constant(sphere), L.c_tilde, L.eps0)
    limit = 1 / (8 * (L.c_tilde + 1 / L.eps0))
    edge = HomotopySpec(sphere, Bump([np.sqrt(2), 0.0], 1.0, limit / 1.5))
    assert edge.ds_H_inf == pytest.approx(limit)
    assert not homotopy_condition(edge, L.c_tilde, L.eps0, J_inf=1.0)
    small = HomotopySpec(sphere, Bump([np.sqrt(2), 0.0], 1.0, 1e-4))
    assert homotopy_condition(small, L.c_tilde, L.eps0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 3), st.floats(-2, 3))
def test_smoothstep(a, b):
    lo, hi = min(a, b), max(a, b)
    assert 0 <= smoothstep(lo) <= smoothstep(hi) <= 1
    assert 0 <= smoothstep_slope(a) <= 1.5


def test_homotopy_is_constant_outside_unit_interval(sphere, bump_homotopy):
    x = np.array([0.3, 0.1])
    assert bump_homotopy.model_at(0.5).value(x) != sphere.value(x)
    assert bump_homotopy.model_at(-3.0).value(x) == sphere.value(x)
    assert bump_homotopy.model_at(1.0).value(x) == bump_homotopy.model_at(7.0).value(x)
    assert bump_homotopy.ds_H(2.0, x) == 0.0
    assert bump_homotopy.ds_H_inf == pytest.approx(1.5e-4)


def test_connecting_trajectory(small_traj):
    tr = small_traj
    assert tr.converged and tr.residual < 1e-8
    a = tr.action_trace()
    assert a[0] == pytest.approx(0.0, abs=1e-5) and a[-1] == pytest.approx(TWO_PI, abs=1e-5)
    assert np.all(np.diff(a) >= -tr.residual * np.diff(tr.s_grid))
    e = tr.energy()
    assert abs(e - (a[-1] - a[0])) <= 1e-6 * e


def test_constant_bvp(sphere, sphere_ends):
    _, orb = sphere_ends[32]
    tr = solve_bvp(HomotopySpec.constant(sphere), (orb, orb), opts=BVPOptions(nodes=41))
    assert tr.converged and tr.residual < 1e-10
    assert np.ptp(tr.action_trace()) < 1e-10


def _parametric_defect(tr):
    """A^{H_1}(u(+S)) - A^{H_0}(u(-S)) - (energy - int eta(s) int d_s H_s(v) ds)."""
    s = tr.s_grid
    src = np.array([tr.eta[i] * np.mean(tr.homotopy.ds_H(s[i], tr.v[i])) for i in range(tr.nodes)])
    a = tr.action_trace()
    return a[-1] - a[0] - (tr.energy() - np.trapezoid(src, s)), np.trapezoid(src, s)


def test_parametric_derivative_identity(homotopy_traj, bump_homotopy, sphere_ends):
    assert homotopy_traj.converged
    d0, src = _parametric_defect(homotopy_traj)
    assert abs(src) > 1e-4
    lam0, orb = sphere_ends[64]
    fine = refine(homotopy_traj, (lam0, find_orbit(bump_homotopy.H1, orb.representative)))
    d1, _ = _parametric_defect(fine)
    # quadrature in s is second order, so halving ds should cut the defect about 4x
    assert abs(d1) < abs(src) * 0.05 and abs(d0) / abs(d1) >= 3


def test_midpoint_defect_is_second_order(refinement_levels):
    d = [np.max(tr.midpoint_defect()) for tr in refinement_levels]
    assert d[0] / d[1] >= 3 and d[1] / d[2] >= 3


def test_nonstandard_j_energy(sphere, sphere_ends):
    J = AlmostComplexSpec(1, [1.4, 0.0], 0.6, 0.3, 1.0)
    orb = find_orbit(sphere, circle_seed(np.sqrt(2), 1, None, 16))
    ends = (constant_component(sphere, orb.representative.samples[0], 16), orb)
    # the J bump slows the decay into the orbit, so the truncated ends sit ~1e-5 away
    opts = BVPOptions(nodes=61, s_max=12, tol=1e-6, endpoint_tol=1e-4)
    tr = solve_bvp(HomotopySpec.constant(sphere, J), ends, opts=opts)
    assert tr.converged
    a = tr.action_trace()
    assert tr.energy("J") == pytest.approx(a[-1] - a[0], rel=1e-6)


def test_violating_homotopy_still_solves(sphere, sphere_ledger, sphere_ends):
    hom = HomotopySpec(sphere, Bump([np.sqrt(2), 0.0], 1.0, 0.5))
    lam0, orb = sphere_ends[32]
    tr = solve_bvp(hom, (lam0, find_orbit(hom.H1, orb.representative)), opts=BVPOptions(nodes=101))
    assert np.isfinite(tr.residual)
    rep = apriori_monitor(tr, sphere_ledger)
    assert any(v["check"] == "homotopy slope precondition" for v in rep.violations)


def test_trajectory_io(small_traj, tmp_path):
    small_traj.to_json(tmp_path / "t.json")
    back = FloerTrajectory.from_json(tmp_path / "t.json")
    assert np.array_equal(back.v, small_traj.v) and back.residual == small_traj.residual
    small_traj.to_csv(tmp_path / "t.csv")
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["s", "action", "grad_norm", "eta", "l2_norm", "linf_norm"]
    assert len(rows) == small_traj.nodes + 1


def test_constant_trajectory(sphere, sphere_ends):
    _, orb = sphere_ends[32]
    tr = constant_trajectory(HomotopySpec.constant(sphere), orb.representative, np.linspace(-1, 1, 5))
    assert tr.residual < 1e-8 and tr.energy() == 0


class TestExplorer:
    def test_fixed_point(self, sphere, sphere_ends):
        _, orb = sphere_ends[32]
        tr = integrate_explore(sphere, orb.representative, (0, 0.5), mode_cap=4, nodes=11)
        assert np.abs(tr.v - orb.representative.samples).max() < 1e-8
        assert tr.diagnostics["exploratory"]

    def test_action_increases(self, sphere, sphere_ends):
        _, orb = sphere_ends[32]
        u = orb.representative
        rng = np.random.default_rng(0)
        t = np.arange(u.N) / u.N
        pert = 1e-2 * np.outer(np.cos(2 * np.pi * t), rng.standard_normal(2))
        tr = integrate_explore(sphere, LoopMultiplier(Loop(u.samples + pert), u.eta + 0.01), (0, 0.3),
                               mode_cap=3, nodes=31)
        a = tr.action_trace()
        assert np.all(np.diff(a) > 0)

    def test_eta_equation(self, sphere):
        u0 = LoopMultiplier(Loop.constant([1.5, 0.0], 16), 0.05)
        tr = integrate_explore(sphere, u0, (0, 0.2), mode_cap=2, nodes=41)
        deta = np.gradient(tr.eta, tr.s_grid)
        expect = [-np.mean(sphere.value(v)) for v in tr.v]
        assert np.abs(deta - expect)[1:-1].max() < 1e-4

    def test_mode_cap_checked(self, sphere, sphere_ends):
        with pytest.raises(ValueError):
            integrate_explore(sphere, sphere_ends[32][1].representative, (0, 1), mode_cap=17)


def test_gradient_vanishes_at_endpoints(small_traj):
    g = small_traj.grad_norms()
    assert g[0] < 1e-4 and g[-1] < 1e-4
    H = small_traj.homotopy.H0
    assert action(H, small_traj.state(small_traj.nodes // 2)) == pytest.approx(np.pi, abs=1e-6)
    assert gradient(H, small_traj.state(0)).norm() == pytest.approx(g[0])
