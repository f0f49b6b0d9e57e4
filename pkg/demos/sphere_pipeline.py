"""Solve one gradient-flow line on the round circle H = (|x|^2 - 2)/2 and audit it.

The line runs from the constant loops on the level set (action 0) up to the
simple orbit (action 2 pi). Run: python demos/sphere_pipeline.py
"""

import numpy as np

from rabiflow.bounds import apriori_monitor, build_ledger, level_set_grad_inf, l2_global_bound, oscillation_audit
from rabiflow.flow import BVPOptions, HomotopySpec, circle_seed, constant_component, find_orbit, solve_bvp
from rabiflow.hamiltonians import build_model, certify

H = build_model({"name": "sphere", "n": 1})
cert = certify(H)
ledger = build_ledger(cert, 0.0, 2 * np.pi, inf_grad_sigma=level_set_grad_inf(H))
print(f"eps0={ledger.eps0:.5f}  c_tilde={ledger.c_tilde:.3f}  delta={ledger.delta:.3f}  eps={ledger.eps:.3g}")

orbit = find_orbit(H, circle_seed(np.sqrt(2), 1, None, 32))
const = constant_component(H, orbit.representative.samples[0], 32)
print(f"orbit: eta={orbit.representative.eta:.12f}  action={orbit.action_value:.12f}")

tr = solve_bvp(HomotopySpec.constant(H), (const, orbit), opts=BVPOptions(nodes=101))
a = tr.action_trace()
print(f"trajectory: converged={tr.converged}  residual={tr.residual:.2e}")
print(f"  action {a[0]:.3e} -> {a[-1]:.6f}, energy {tr.energy():.6f}")
for i in range(0, tr.nodes, 20):
    print(f"  s={tr.s_grid[i]:7.2f}  eta={tr.eta[i]:8.4f}  action={a[i]:8.4f}")

for name, rep in [("a-priori", apriori_monitor(tr, ledger)),
                  ("oscillation", oscillation_audit(tr, ledger)),
                  ("global L2", l2_global_bound(tr, ledger))]:
    print(f"{name:12s} passed={rep.passed}")
