import re
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from rabiflow.bounds import build_ledger, level_set_grad_inf
from rabiflow.flow import (
    BVPOptions,
    HomotopySpec,
    circle_seed,
    constant_component,
    find_orbit,
    refine,
    solve_bvp,
)
from rabiflow.hamiltonians import Bump, build_model, certify

TWO_PI = 2 * np.pi


def shooting_period(H, x0, k, width=0.8):
    """Period eta near 2 pi k for which the flow of eta X^H returns to x0 (independent oracle).

    Solves p(1; eta) = 0 for the orbit through x0 = (q0, 0) by bracketing.
    """
    def endpoint(eta):
        sol = solve_ivp(lambda t, x: eta * H.vector_field(x), (0, 1), x0, rtol=1e-12, atol=1e-13)
        return sol.y[:, -1]

    f = lambda eta: endpoint(eta)[1]  # noqa: E731
    eta = brentq(f, TWO_PI * k - width, TWO_PI * k + width, xtol=1e-13)
    return eta, endpoint(eta)


@pytest.fixture(scope="session")
def sphere():
    return build_model({"name": "sphere", "n": 1})


@pytest.fixture(scope="session")
def sphere_cert(sphere):
    return certify(sphere)


@pytest.fixture(scope="session")
def sphere_ledger(sphere, sphere_cert):
    return build_ledger(sphere_cert, 0.0, TWO_PI, inf_grad_sigma=level_set_grad_inf(sphere))


def _ends(H, N, k=1):
    orb = find_orbit(H, circle_seed(np.sqrt(2), k, None, N))
    return constant_component(H, orb.representative.samples[0], N), orb


@pytest.fixture(scope="session")
def sphere_ends(sphere):
    return {N: _ends(sphere, N) for N in (32, 64, 128)}


@pytest.fixture(scope="session")
def small_traj(sphere, sphere_ends):
    return solve_bvp(HomotopySpec.constant(sphere), sphere_ends[32], opts=BVPOptions(nodes=101))


@pytest.fixture(scope="session")
def refinement_levels(sphere, small_traj, sphere_ends):
    levels = [small_traj]
    for N in (64, 128):
        levels.append(refine(levels[-1], sphere_ends[N]))
    return levels


@pytest.fixture(scope="session")
def big_traj_timed(sphere, sphere_ends):
    t0 = time.perf_counter()
    tr = solve_bvp(HomotopySpec.constant(sphere), sphere_ends[128], opts=BVPOptions(nodes=200))
    return tr, time.perf_counter() - t0


@pytest.fixture(scope="session")
def big_traj(big_traj_timed):
    return big_traj_timed[0]


@pytest.fixture(scope="session")
def bump_homotopy(sphere):
    return HomotopySpec(sphere, Bump([0.0, 0.0], 1.0, 1e-4))


@pytest.fixture(scope="session")
def homotopy_traj(sphere, bump_homotopy, sphere_ends):
    lam0, orb = sphere_ends[32]
    lam1 = find_orbit(bump_homotopy.H1, orb.representative)
    return solve_bvp(bump_homotopy, (lam0, lam1), opts=BVPOptions(nodes=101))


@pytest.fixture(scope="session")
def solved_trajectories(small_traj, homotopy_traj):
    return [small_traj, homotopy_traj]


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    outcome = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", getattr(rep, "nodeid", ""))
            if not m:
                continue
            n = int(m.group(1))
            ok = key == "passed" and outcome.get(n, (None, True))[1]
            outcome[n] = (m.group(2).replace("_", " "), ok)
    if not outcome:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(outcome):
        name, ok = outcome[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}")
