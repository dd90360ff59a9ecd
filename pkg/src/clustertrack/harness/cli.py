"""Command-line entry point: ``clustertrack {solve,oracle,theory,validate,scenario-gen}``.

Exit codes: 0 success, 1 non-convergence, 2 configuration error,
3 infeasible scenario.  Artifacts go to the config's ``output_dir``,
overridden by ``--output-dir`` or the ``CLUSTERTRACK_OUTPUT_DIR``
environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from .. import __version__, kernels, power
from ..errors import ClusterTrackError, ConfigError, DegenerateConstantsError, InfeasibleSetError, InputError
from ..oracle import centralized_solve, natural_residual
from ..solver import SolverConfig, run
from ..theory import estimate_constants, rate_report, spectral_radius_2x2, matrix_A_tau
from ..topology import validate_topology
from ..validation import Check, all_passed
from . import config as cfgmod

log = logging.getLogger("clustertrack")

EXIT_OK, EXIT_NONCONVERGED, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3
TIMING_KEYS = {"wall_time_s", "wall_ms", "timing"}


# -- serialization ------------------------------------------------------------------

def clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return obj


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def write_report(path: Path, body: dict, cfg: cfgmod.ExperimentConfig, kind: str) -> dict:
    report = clean({"kind": kind, "tool": "clustertrack", "version": __version__,
                    "backend": kernels.BACKEND, "config_hash": cfg.config_hash,
                    "config_source": cfg.source, **body})
    report["report_hash"] = cfgmod.canonical_hash(_strip_timing(report))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# -- shared pieces ------------------------------------------------------------

def _prepare(args):
    cfg = cfgmod.load_config(args.config)
    out = cfg.output_dir(args.output_dir)
    built = cfgmod.build_scenario(cfg)
    topo = cfgmod.build_topology(cfg, built.game.dims)
    return cfg, out, built, topo


def _theory(cfg, built, topo):
    """Rate report dictionary, or an ``error`` entry when constants are unusable."""
    try:
        c = estimate_constants(built.game, built.sets, topo, mode=cfg.theory["mode"],
                               samples=cfg.theory["samples"])
        rep = rate_report(c, points=cfg.theory["points"])
        return rep.to_dict(), rep, c
    except (DegenerateConstantsError, InputError) as exc:
        return {"error": str(exc)}, None, None


def _objectives(built, x):
    d = built.game.dims
    return {"F": [built.game.cluster_objective(h, x) for h in range(d.H)],
            "sum_cost": [built.game.cluster_total_cost(h, x) for h in range(d.H)]}


def _dispatch_csv(path, built, x):
    parts = power.decompose(x, built.specs, built.game.dims)
    with open(path, "w") as fh:
        fh.write("microgrid,t,demand,p,g_total,s_total,charge_total\n")
        for spec, part in zip(built.specs, parts):
            charges = [power.charge_path(b, s) for b, s in zip(spec.batteries, part["s"])]
            for t in range(spec.T):
                q = sum(c[t + 1] for c in charges) if charges else 0.0
                fh.write(f"{spec.name},{t},{spec.demand[t]!r},{part['p'][t]!r},"
                         f"{part['g'][:, t].sum()!r},{part['s'][:, t].sum()!r},{q!r}\n")


def _oracle(cfg, built):
    oc = cfg.oracle
    kw = {k: oc[k] for k in ("gamma", "tol", "max_iter") if k in oc}
    return centralized_solve(built.game, built.sets, **kw)


# -- subcommands ----------------------------------------------------------------

def cmd_solve(args):
    cfg, out, built, topo = _prepare(args)
    sc = dict(cfg.solver)
    alpha = sc.pop("alpha", "auto")
    theory, rep, consts = _theory(cfg, built, topo)
    if alpha == "auto":
        if rep is None:
            raise ConfigError(f"solver.alpha is 'auto' but no step bound is available: {theory['error']}",
                              field="solver.alpha")
        alpha = rep.alpha_bar / 2
    if args.max_iter:
        sc["max_iter"] = args.max_iter
    solver_cfg = SolverConfig(alpha=float(alpha), **sc)
    if rep is not None:
        theory["run_alpha"] = solver_cfg.alpha
        # the certificate matrix is only defined below alpha_A
        theory["run_rho_A_tau"] = (spectral_radius_2x2(matrix_A_tau(solver_cfg.alpha, consts, check=False))
                                   if solver_cfg.alpha < rep.alpha_A else float("nan"))

    ref = None
    oracle_body = None
    if cfg.oracle["enabled"]:
        ns = _oracle(cfg, built)
        ref = ns.x
        oracle_body = {"converged": ns.converged, "iterations": ns.iterations,
                       "natural_residual": ns.natural_residual, "step": ns.step, "step_rule": ns.step_rule}

    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    state, trace = run(built.game, built.sets, topo, solver_cfg, reference=ref, trace_path=out / "trace.csv")
    wall = time.perf_counter() - t0 if solver_cfg.timing else 0.0
    x = state.X.mean(axis=0)
    body = {
        "status": "converged" if trace.converged else "not_converged",
        "stop_reason": trace.stop_reason,
        "iterations": state.k,
        "alpha": solver_cfg.alpha,
        "final": {"consensus_residual": trace.consensus_res[-1], "tracking_residual": trace.tracking_res[-1],
                  "scaled_natural_residual_agent0": trace.natural_res,
                  "natural_residual": natural_residual(built.game, built.sets, x, solver_cfg.alpha),
                  "relative_error_vs_oracle": trace.err_vs_oracle[-1] if ref is not None else None},
        "x_mean": x,
        "objectives": _objectives(built, x),
        "oracle": oracle_body,
        "theory": theory,
        "wall_time_s": wall,
    }
    if built.specs is not None:
        body["demand_imbalance"] = power.demand_imbalance(built.specs, x, built.game.dims)
        body["charge_violation"] = power.charge_feasibility(built.specs, x, built.game.dims)
        _dispatch_csv(out / "dispatch.csv", built, x)
    report = write_report(out / "report.json", body, cfg, "solve")
    _say(args, f"solve: {report['status']} after {state.k} iterations "
               f"(alpha={solver_cfg.alpha:.6g}); artifacts in {out}")
    return EXIT_OK if trace.converged else EXIT_NONCONVERGED


def cmd_oracle(args):
    cfg, out, built, topo = _prepare(args)
    ns = _oracle(cfg, built)
    obj = _objectives(built, ns.x)
    order = [int(h) for h in np.argsort(obj["F"])]
    body = {"status": "converged" if ns.converged else "not_converged", "x": ns.x,
            "iterations": ns.iterations, "natural_residual": ns.natural_residual,
            "step": ns.step, "step_rule": ns.step_rule, "objectives": obj,
            "objective_order_ascending": order}
    if built.specs is not None:
        body["cluster_names"] = [s.name for s in built.specs]
        body["demand_imbalance"] = power.demand_imbalance(built.specs, ns.x, built.game.dims)
        body["charge_violation"] = power.charge_feasibility(built.specs, ns.x, built.game.dims)
        out.mkdir(parents=True, exist_ok=True)
        _dispatch_csv(out / "oracle_dispatch.csv", built, ns.x)
    write_report(out / "oracle.json", body, cfg, "oracle")
    names = body.get("cluster_names", [f"cluster {h}" for h in range(built.game.dims.H)])
    log.info("objective ordering (lowest first): %s", ", ".join(names[h] for h in order))
    _say(args, f"oracle: {body['status']}; F^h = " + ", ".join(f"{v:.6g}" for v in obj["F"]))
    return EXIT_OK if ns.converged else EXIT_NONCONVERGED


def cmd_theory(args):
    cfg, out, built, topo = _prepare(args)
    theory, rep, _ = _theory(cfg, built, topo)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "theory.json", {"theory": theory}, cfg, "theory")
    if rep is None:
        _say(args, f"theory: constants unusable: {theory['error']}")
        return EXIT_NONCONVERGED
    with open(out / "theory_grid.csv", "w") as fh:
        rep.grid_csv(fh)
    regime = "upper-triangular (all clusters singleton)" if rep.upper_triangular else "coupled"
    _say(args, f"theory: alpha_bar={rep.alpha_bar:.6g}, grid certified={rep.certified} "
               f"(max rho={rep.max_grid_rho:.6g}), regime {regime}")
    return EXIT_OK


def validation_checks(cfg) -> list[Check]:
    """All assumption checks for a configuration; never raises on bad data."""
    checks = []
    scen = cfg.scenario
    params_ok = True
    specs = pricing = None
    if scen["type"] == "microgrid":
        specs, pricing, form = cfgmod.fleet_specs(scen["fleet"])
        pc = power.validate_parameters(specs, pricing)
        checks += pc
        params_ok = all(c.passed for c in pc if c.severity == "error")
    built = None
    if params_ok:
        try:
            built = cfgmod.build_scenario(cfg)
            checks.append(Check("feasibility", True, "every cluster set has a feasible witness"))
        except InfeasibleSetError as exc:
            checks.append(Check("feasibility", False, str(exc)))
    else:
        checks.append(Check("feasibility", False, "skipped: invalid parameters"))
    if built is None:
        checks.append(Check("strong_monotonicity", False, "skipped: scenario could not be built"))
        return checks
    topo = cfgmod.build_topology(cfg, built.game.dims)
    checks += validate_topology(built.game.dims, topo)
    g = built.game
    if g.is_affine:
        J = g.jacobian()[0]
        mu = float(np.linalg.eigvalsh(0.5 * (J + J.T))[0])
        detail = f"mu = {mu:.6g} (smallest eigenvalue of the symmetric Jacobian part)"
        if pricing is not None and pricing.q == 0 and mu > 0:
            # monotone only through each device's own curvature: no market coupling
            checks.append(Check("strong_monotonicity", False, detail + "; price slope is zero, so this is "
                                "the coupling-free value", severity="warning"))
        else:
            checks.append(Check("strong_monotonicity", mu > 0, detail))
    else:
        try:
            c = estimate_constants(g, built.sets, topo, mode="sampled", samples=200)
            checks.append(Check("strong_monotonicity", c.mu > 0, f"sampled mu = {c.mu:.6g} (heuristic)",
                                severity="warning"))
        except DegenerateConstantsError as exc:
            checks.append(Check("strong_monotonicity", False, str(exc)))
    return checks


def cmd_validate(args):
    cfg = cfgmod.load_config(args.config)
    checks = validation_checks(cfg)
    for c in checks:
        print(c.line())
    out = cfg.output_dir(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "validate.json", {"checks": [c.to_dict() for c in checks],
                                         "all_passed": all_passed(checks)}, cfg, "validate")
    if all_passed(checks):
        return EXIT_OK
    infeasible = any(c.name == "feasibility" and not c.passed and not c.detail.startswith("skipped")
                     for c in checks)
    return EXIT_INFEASIBLE if infeasible else EXIT_CONFIG


def flagship_config_text() -> str:
    return resources.files("clustertrack.data").joinpath("flagship.json").read_text()


def cmd_scenario_gen(args):
    text = flagship_config_text()
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text)
        _say(args, f"scenario-gen: wrote {args.output}")
    return EXIT_OK


# -- plumbing -------------------------------------------------------------------

def _say(args, msg):
    if not getattr(args, "quiet", False):
        print(msg)


def build_parser():
    p = argparse.ArgumentParser(
        prog="clustertrack", description="Distributed equilibrium seeking for multi-cluster games.",
        epilog="exit codes: 0 ok, 1 not converged, 2 config error, 3 infeasible scenario")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="experiment config (JSON)")
        sp.add_argument("--output-dir", help=f"artifact directory (overrides ${cfgmod.OUTPUT_ENV} and the config)")
        sp.add_argument("-q", "--quiet", action="store_true")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("solve", help="run the distributed tracking solver")
    common(sp)
    sp.add_argument("--max-iter", type=int, help="override solver.max_iter")
    sp.set_defaults(func=cmd_solve)
    sp = sub.add_parser("oracle", help="centralized equilibrium")
    common(sp)
    sp.set_defaults(func=cmd_oracle)
    sp = sub.add_parser("theory", help="problem constants and step-size certificate")
    common(sp)
    sp.set_defaults(func=cmd_theory)
    sp = sub.add_parser("validate", help="check modelling assumptions")
    common(sp)
    sp.set_defaults(func=cmd_validate)
    sp = sub.add_parser("scenario-gen", help="emit the shipped five-microgrid config")
    sp.add_argument("-o", "--output", help="file to write (default stdout)")
    sp.add_argument("-q", "--quiet", action="store_true")
    sp.set_defaults(func=cmd_scenario_gen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleSetError as exc:
        print(f"infeasible scenario: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InputError, ClusterTrackError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
