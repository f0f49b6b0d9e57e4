"""Print a coarse ASCII map of F(v) = |v|^2 / 4 over the (s, t) cylinder and run the elliptic audit.

Cells where F is above the level of the ball of radius R are marked; the
audit checks that Delta F >= f on each such region.
"""

import numpy as np

from rabiflow.bounds import build_ledger, level_set_grad_inf
from rabiflow.flow import BVPOptions, HomotopySpec, circle_seed, constant_component, find_orbit, solve_bvp
from rabiflow.hamiltonians import build_model, certify
from rabiflow.maxprinciple import F, elliptic_audit

R = 1.3
H = build_model({"name": "sphere", "n": 1})
ledger = build_ledger(certify(H), 0.0, 2 * np.pi, inf_grad_sigma=level_set_grad_inf(H))
orb = find_orbit(H, circle_seed(np.sqrt(2), 1, None, 32))
tr = solve_bvp(HomotopySpec.constant(H), (constant_component(H, orb.representative.samples[0], 32), orb),
               opts=BVPOptions(nodes=101))

Fsv = F(tr.v)
level = R**2 / 4
shades = " .:-=+*#"
for i in range(0, tr.nodes, 5):
    row = Fsv[i]
    cells = "".join("@" if f > level else shades[min(7, int(8 * f / Fsv.max()))] for f in row)
    print(f"s={tr.s_grid[i]:7.2f} |{cells}|")

rep = elliptic_audit(tr, R, ledger)
print(f"patches above radius {R}: {len(rep.patches)}  passed={rep.passed}")
for p in rep.patches:
    print(f"  s in [{p.s_range[0]:.2f}, {p.s_range[1]:.2f}]  nodes={p.interior_nodes}  min margin={p.min_margin:.3e}")
