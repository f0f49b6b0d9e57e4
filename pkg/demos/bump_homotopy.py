"""Continuation through a small bump centred at the origin.

The Hamiltonian moves from H0 = (|x|^2 - 2)/2 to H0 + h along a smoothstep
schedule, where h has height 1e-4 and support in the unit disc. The end orbits
sit outside the support, so they do not move, but the flow line sweeps through
the disc and picks up an energy defect from the s-derivative of H.
"""

import numpy as np

from rabiflow.bounds import apriori_monitor, build_ledger, level_set_grad_inf
from rabiflow.flow import (BVPOptions, HomotopySpec, circle_seed, constant_component, find_orbit,
                           homotopy_condition, solve_bvp)
from rabiflow.hamiltonians import Bump, build_model, certify

H = build_model({"name": "sphere", "n": 1})
ledger = build_ledger(certify(H), 0.0, 2 * np.pi, inf_grad_sigma=level_set_grad_inf(H))
hom = HomotopySpec(H, Bump([0.0, 0.0], 1.0, 1e-4))
print("small enough for the uniform bounds:", homotopy_condition(hom, ledger.c_tilde, ledger.eps0))

orb0 = find_orbit(H, circle_seed(np.sqrt(2), 1, None, 32))
orb1 = find_orbit(hom.H1, orb0.representative)
lam0 = constant_component(H, orb0.representative.samples[0], 32)
print(f"period shift of the simple orbit: {orb1.representative.eta - orb0.representative.eta:+.3e}")

tr = solve_bvp(hom, (lam0, orb1), opts=BVPOptions(nodes=101))
a = tr.action_trace()
drops = np.diff(a)
print(f"converged={tr.converged}  action {a[0]:.3e} -> {a[-1]:.6f}  energy={tr.energy():.6f}")
print(f"energy minus action gain: {tr.energy() - (a[-1] - a[0]):+.3e}")
print(f"largest single-step decrease: {-drops.min():.3e}")
print("a-priori monitor passed:", apriori_monitor(tr, ledger).passed)
