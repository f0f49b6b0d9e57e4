"""``rabi-flow``: certify -> ledger -> orbits -> flow -> audit -> report.

Every subcommand rebuilds what it needs from the config, except ``audit``
and ``report``, which read trajectories and JSON artifacts already written
to ``--out``.  JSON artifacts are written with sorted keys and no
timestamps; run metadata goes to the ``run_meta.json`` sidecar.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .action import AlmostComplexSpec
from .bounds import (
    BoundLedger,
    apriori_monitor,
    build_ledger,
    classify_nodes,
    l2_global_bound,
    level_set_grad_inf,
    oscillation_audit,
)
from .critproj import drift_audit
from .flow import (
    CONSTANT,
    BVPOptions,
    CriticalComponent,
    FloerTrajectory,
    HomotopySpec,
    constant_component,
    find_orbit,
    orbit_family,
)
from .hamiltonians import (
    Bump,
    PerturbationBall,
    SamplingPlan,
    build_model,
    certify,
    po_window_check,
    sup_on_ball,
)
from .loopspace import l2_norm
from .maxprinciple import elliptic_audit, heatmap_rows, k_infinity_radius

SCHEMA_VERSION = 1

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3, 4

DEFAULTS = {
    "model": {"name": "sphere", "n": 1},
    "discretization": {"N": 32, "nodes": 101, "s_max": 16.0},
    "window": {"a": 0.0, "b": 2 * math.pi},
    "homotopy": {"perturbation": None},
    "J": {"strength": 0.0, "region_center": None, "region_radius": 0.0, "ng": 1.0},
    "ledger": {"delta": None, "eps": None, "V_radius": 0.0, "K_radius": 0.0},
    "orbits": {"ks": [1, 2, 3]},
    "flow": {"pairs": [["constant", 1]]},
    "solver": {"tol": 1e-8, "endpoint_tol": 1e-5, "max_iter": 80},
    "audit": {"K_inf_radius": None, "tol_disc": 0.0},
    "seed": 0,
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {where!r}")
        # the model spec is free-form; everything else is schema-checked
        if isinstance(base[k], dict) and k != "model":
            if not isinstance(v, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _apply_set(cfg: dict, item: str) -> dict:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    value = yaml.safe_load(raw)
    parts = key.split(".")
    tree: dict = {}
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    if parts[0] == "model":
        out = copy.deepcopy(cfg)
        sub = out["model"]
        for p in parts[1:-1]:
            sub = sub.setdefault(p, {})
        sub[parts[-1]] = value
        return out
    return _merge(cfg, tree)


def load_config(path: str | None, sets=(), seed: int | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            user = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a mapping")
        user.pop("schema_version", None)
        cfg = _merge(cfg, user)
    for item in sets:
        cfg = _apply_set(cfg, item)
    if seed is not None:
        cfg["seed"] = int(seed)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if not isinstance(cfg["model"], dict) or "name" not in cfg["model"]:
        raise ConfigError("model must be a mapping with a 'name'")
    try:
        build_model(cfg["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad model spec: {exc}") from exc
    d = cfg["discretization"]
    if int(d["N"]) < 4 or int(d["N"]) % 2:
        raise ConfigError("discretization.N must be an even integer >= 4")
    if int(d["nodes"]) < 5 or float(d["s_max"]) <= 1:
        raise ConfigError("discretization needs nodes >= 5 and s_max > 1")
    if float(cfg["window"]["a"]) > float(cfg["window"]["b"]):
        raise ConfigError("window requires a <= b")
    for pair in cfg["flow"]["pairs"]:
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise ConfigError("flow.pairs entries must be [from, to]")
        for lab in pair:
            if lab != "constant" and lab not in cfg["orbits"]["ks"]:
                raise ConfigError(f"flow label {lab!r} is neither 'constant' nor one of orbits.ks")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")


# ---------------------------------------------------------------- JSON helpers

def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def _write_json(path: Path, obj) -> None:
    path.write_text(dumps(obj))


# ---------------------------------------------------------------- pipeline pieces

class Context:
    def __init__(self, cfg: dict, out: Path):
        self.cfg = cfg
        self.out = out
        self.H = build_model(cfg["model"])
        Jc = cfg["J"]
        self.J = AlmostComplexSpec(self.H.n, Jc["region_center"], Jc["region_radius"], Jc["strength"], Jc["ng"])
        p = cfg["homotopy"]["perturbation"]
        bump = None if p is None else Bump(p["center"], p["width"], p["amplitude"])
        self.hom = HomotopySpec(self.H, bump, self.J)
        self.plan = SamplingPlan(seed=cfg["seed"])
        self._cert = None
        self._orbits = None
        self.ball_problems: list = []

    @property
    def N(self) -> int:
        return int(self.cfg["discretization"]["N"])

    @property
    def K_radius(self) -> float:
        r = float(self.cfg["ledger"]["K_radius"])
        p = self.hom.perturbation
        if p is not None:
            r = max(r, float(np.linalg.norm(p.center)) + p.width)
        return r

    def certificate(self):
        """Base certificate, made uniform over the perturbation ball when the homotopy is not constant."""
        if self._cert is None:
            cert = certify(self.H, self.plan)
            self.ball_problems = []
            if not self.hom.is_constant:
                R = self.K_radius
                supX = sup_on_ball(lambda x: np.linalg.norm(self.H.liouville_global(x), axis=-1),
                                   self.H.dim, R, seed=self.cfg["seed"])
                cert = cert.uniform(R, supX)
                ball = PerturbationBall(self.H, R, cert.theta, self.hom.perturbation)
                self.ball_problems = ball.validate()
            self._cert = cert
        return self._cert

    def components(self) -> dict:
        """label -> CriticalComponent for H0 (orbits labelled by winding k)."""
        if self._orbits is None:
            ks = list(self.cfg["orbits"]["ks"])
            fam = orbit_family(self.H, ks=ks, N=self.N)
            comps = {k: c for k, c in zip(ks, fam)}
            anchor = next(iter(comps.values())).representative.samples[0] if comps else np.eye(self.H.dim)[0]
            comps["constant"] = constant_component(self.H, anchor, self.N)
            self._orbits = comps
        return self._orbits

    def in_window(self) -> dict:
        a, b = self.cfg["window"]["a"], self.cfg["window"]["b"]
        tol = 1e-8 * (1 + abs(a) + abs(b))
        return {k: c for k, c in self.components().items() if a - tol <= c.action_value <= b + tol}

    def v3(self) -> float:
        comps = self.in_window().values()
        return max((l2_norm(c.representative.samples) for c in comps), default=0.0)

    def ledger(self) -> BoundLedger:
        L = self.cfg["ledger"]
        Jc = self.cfg["J"]
        return build_ledger(
            self.certificate(), self.cfg["window"]["a"], self.cfg["window"]["b"],
            J_inf=self.J.norm_inf(), ng=Jc["ng"], K_radius=self.K_radius, V_radius=L["V_radius"],
            v3=self.v3(), inf_grad_sigma=level_set_grad_inf(self.H, seed=self.cfg["seed"]),
            delta=L["delta"], eps=L["eps"])

    def end_component(self, label, at_end: bool) -> CriticalComponent:
        c = self.components()[label]
        if not at_end or self.hom.is_constant:
            return c
        H1 = self.hom.H1
        if c.kind == CONSTANT:
            return constant_component(H1, c.representative.samples[0], self.N)
        return find_orbit(H1, c.representative)

    def solver_options(self) -> BVPOptions:
        d, s = self.cfg["discretization"], self.cfg["solver"]
        return BVPOptions(nodes=int(d["nodes"]), s_max=float(d["s_max"]), tol=float(s["tol"]),
                          endpoint_tol=float(s["endpoint_tol"]), max_iter=int(s["max_iter"]))


def cmd_certify(ctx: Context) -> int:
    from .hamiltonians import theta_radius

    cert = ctx.certificate()
    d = cert.to_dict()
    d["theta_radius"] = theta_radius(cert, ctx.K_radius)
    d["perturbation_problems"] = ctx.ball_problems
    d["schema_version"] = SCHEMA_VERSION
    _write_json(ctx.out / "certificate.json", d)
    return EXIT_OK if cert.ok and not ctx.ball_problems else EXIT_AUDIT


def cmd_ledger(ctx: Context) -> int:
    led = ctx.ledger()
    problems = led.check_invariants()
    d = led.to_dict()
    d["invariant_problems"] = problems
    _write_json(ctx.out / "ledger.json", d)
    return EXIT_AUDIT if problems else EXIT_OK


def cmd_orbits(ctx: Context) -> int:
    comps = ctx.components()
    window = ctx.in_window()
    with open(ctx.out / "orbits.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "kind", "eta", "action", "grad_norm", "l2_norm", "in_window"])
        for label in sorted(comps, key=str):
            c = comps[label]
            u = c.representative
            w.writerow([label, c.kind, repr(float(u.eta)), repr(float(c.action_value)), repr(float(c.grad_norm)),
                        repr(float(l2_norm(u.samples))), label in window])
    n = max(1.0, 2 * abs(ctx.cfg["window"]["b"]), 2 * abs(ctx.cfg["window"]["a"]))
    radius, status = po_window_check(ctx.H, n, [c.representative for c in comps.values()])
    _write_json(ctx.out / "orbits.json", {
        "schema_version": SCHEMA_VERSION, "v3": ctx.v3(), "po_window": {"n": n, "radius": radius, "status": status},
        "components": {str(k): c.to_dict() for k, c in comps.items()},
    })
    bad = [k for k, c in comps.items() if c.grad_norm > 1e-6]
    return EXIT_SOLVER if bad else EXIT_OK


def cmd_flow(ctx: Context) -> int:
    opts = ctx.solver_options()
    status = EXIT_OK
    index = []
    for i, (a, b) in enumerate(ctx.cfg["flow"]["pairs"]):
        lam0 = ctx.end_component(a, at_end=False)
        lam1 = ctx.end_component(b, at_end=True)
        traj = solve_pair(ctx.hom, lam0, lam1, opts)
        traj.to_csv(ctx.out / f"traj_{i}.csv")
        traj.to_json(ctx.out / f"traj_{i}.json")
        index.append({"index": i, "pair": [a, b], "residual": traj.residual, "converged": traj.converged})
        if not traj.converged:
            status = EXIT_SOLVER
    _write_json(ctx.out / "flow.json", {"schema_version": SCHEMA_VERSION, "trajectories": index,
                                        "homotopy": ctx.hom.spec()})
    return status


def solve_pair(hom, lam0, lam1, opts):
    from .flow import solve_bvp

    return solve_bvp(hom, (lam0, lam1), opts=opts)


def load_trajectories(ctx: Context) -> list[FloerTrajectory]:
    paths = sorted(ctx.out.glob("traj_*.json"), key=lambda p: int(p.stem.split("_")[1]))
    return [FloerTrajectory.from_json(p, homotopy=ctx.hom) for p in paths]


def monotonicity_report(traj) -> dict:
    a = traj.action_trace()
    slack = traj.residual * np.diff(traj.s_grid)
    drops = np.diff(a) + slack
    worst = float(drops.min()) if len(drops) else 0.0
    return {"name": "monotonicity", "passed": bool(worst >= -1e-12 or not traj.homotopy.is_constant),
            "values": {"worst_increment_with_slack": worst, "applies": traj.homotopy.is_constant}}


def energy_identity_report(traj) -> dict:
    a = traj.action_trace()
    e = traj.energy()
    rel = abs(e - (a[-1] - a[0])) / max(abs(e), 1e-300) if e > 0 else abs(a[-1] - a[0])
    applies = traj.homotopy.is_constant
    return {"name": "energy_identity", "passed": bool(rel < 1e-6 or not applies),
            "values": {"energy": e, "action_gain": float(a[-1] - a[0]), "relative_error": float(rel),
                       "applies": applies}}


def _write_node_csv(path: Path, tr, classes) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "eta", "action", "grad_norm", "l2_norm", "in_B", "in_K0", "in_N"])
        rows = zip(tr.s_grid, tr.eta, tr.action_trace(), tr.grad_norms(), tr.l2_trace(),
                   classes.in_B, classes.in_K0, classes.in_N)
        for *nums, b, k, n in rows:
            w.writerow([repr(float(x)) for x in nums] + [int(b), int(k), int(n)])


def cmd_audit(ctx: Context) -> int:
    led = ctx.ledger()
    trajs = load_trajectories(ctx)
    Rcfg = ctx.cfg["audit"]["K_inf_radius"]
    R = k_infinity_radius(trajs, led) if Rcfg is None else float(Rcfg)
    per = []
    for i, tr in enumerate(trajs):
        classes = classify_nodes(tr, led)
        _write_node_csv(ctx.out / f"audit_{i}.csv", tr, classes)
        reports = [
            apriori_monitor(tr, led).to_dict(),
            oscillation_audit(tr, led, classes=classes).to_dict(),
            l2_global_bound(tr, led).to_dict(),
            monotonicity_report(tr),
            energy_identity_report(tr),
        ]
        dr = drift_audit(tr.s_grid, tr.states(), tr.action_trace(), ctx.H, led.delta, led.M_hat,
                         r_threshold=led.r)
        reports.append({"name": "drift", "passed": dr.passed,
                        "values": {"lhs": dr.lhs, "rhs": dr.rhs, "segments": dr.segments,
                                   "notes": dr.precondition_notes}})
        el = elliptic_audit(tr, R, led, tol_disc=float(ctx.cfg["audit"]["tol_disc"]))
        reports.append({"name": "elliptic", "passed": el.passed, "values": el.to_dict()})
        per.append({"index": i, "residual": tr.residual, "converged": tr.converged, "reports": reports,
                    "passed": all(r["passed"] for r in reports)})
    passed = all(p["passed"] for p in per)
    _write_json(ctx.out / "audit.json", {"schema_version": SCHEMA_VERSION, "K_inf_radius": R,
                                         "trajectories": per, "passed": passed})
    return EXIT_OK if passed else EXIT_AUDIT


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) for x in r])


def cmd_report(ctx: Context) -> int:
    out = ctx.out
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    report = {"schema_version": SCHEMA_VERSION, "config": ctx.cfg}
    for name in ("certificate", "ledger", "orbits", "flow", "audit"):
        p = out / f"{name}.json"
        report[name] = json.loads(p.read_text()) if p.exists() else None
    trajs = load_trajectories(ctx)
    for i, tr in enumerate(trajs):
        s = tr.s_grid
        _write_rows(plots / f"action_{i}.csv", ["s", "action"], zip(s, tr.action_trace()))
        _write_rows(plots / f"eta_{i}.csv", ["s", "eta"], zip(s, tr.eta))
        _write_rows(plots / f"grad_norm_{i}.csv", ["s", "grad_norm"], zip(s, tr.grad_norms()))
        mid = 0.5 * (s[:-1] + s[1:])
        _write_rows(plots / f"energy_density_{i}.csv", ["s", "energy_density"], zip(mid, tr.energy_density()))
        _write_rows(plots / f"heatmap_{i}.csv", ["s", "t", "F", "laplacian_F", "f"], heatmap_rows(tr))
    _write_json(out / "report.json", report)
    audit = report["audit"]
    return EXIT_AUDIT if audit is not None and not audit["passed"] else EXIT_OK


COMMANDS = {
    "certify": cmd_certify,
    "ledger": cmd_ledger,
    "orbits": cmd_orbits,
    "flow": cmd_flow,
    "audit": cmd_audit,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rabi-flow", description="Rabinowitz-Floer trajectory experiments")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML config file")
    ap.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config entry, e.g. window.b=12.57")
    ap.add_argument("--out", default="rabi-flow-out", help="output directory")
    ap.add_argument("--seed", type=int, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = load_config(args.config, args.sets, args.seed)
    except ConfigError as exc:
        _write_json(out / "error.json", {"schema_version": SCHEMA_VERSION, "kind": "config", "message": str(exc)})
        print(f"rabi-flow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.time()
    np.random.seed(cfg["seed"])
    ctx = Context(cfg, out)
    code = COMMANDS[args.command](ctx)
    meta = {
        "command": args.command, "exit_code": code, "seed": cfg["seed"], "config": cfg,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(t0)), "seconds": time.time() - t0,
        "version": __version__, "python": platform.python_version(), "numpy": np.__version__,
    }
    _write_json(out / "run_meta.json", meta)
    return code


if __name__ == "__main__":
    sys.exit(main())
