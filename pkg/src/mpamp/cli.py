"""Command-line entry point: ``mpamp <subcommand> --config cfg.json --out dir``.

Exit codes: 0 ok, 2 configuration error, 3 infeasible target, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .config import load_config, parse_rate, read_schedule_csv
from .dpopt import ZERO_RATE_CONVENTION, CostModel, DpGrids, build_policy, recover_schedule
from .errors import (
    ConfigError,
    DomainError,
    GridCoverageError,
    HorizonCapError,
    InfeasibleError,
    MpampError,
    NumericalError,
)
from .pareto import convexity_check, fit_conjecture, monotonicity_violations, pareto_filter, sweep
from .rd import discretize_gaussian, make_rd_model, node_marginal, rd_sweep
from .sevo import mmse, se_trajectory

log = logging.getLogger("mpamp")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4

# fixed CSV schemas, also checked by the tests
SCHEMAS = {
    "trajectory.csv": ["t", "sigma_sq", "distortion", "mse", "emse"],
    "rd.csv": ["rate_bits", "distortion"],
    "schedule.csv": ["t", "rate_bits", "sigma_sq", "distortion", "mse", "emse"],
    "points.csv": ["b", "delta_over_mmse", "T", "R_agg", "mse", "emse", "total_cost"],
    "fits.csv": ["b", "burn_in", "C4", "C5", "rate_r2", "C7", "C8", "emse_r2", "C6", "C7_distortion",
                 "distortion_r2", "cost_slope", "cost_r2", "cost_corr"],
    "runrecord.csv": ["trial", "t", "mse_empirical", "mse_se", "sigma_hat_sq", "bytes_billed"],
    "ledger.csv": ["t", "billed_uplink_bytes", "transported_bytes", "downlink_bytes"],
}

TERMINAL_RULE = "smallest positive grid rate meeting delta"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Run:
    """Per-invocation context: output directory and provenance header."""

    def __init__(self, cfg, out, seed, extra=None):
        self.cfg, self.out, self.seed = cfg, out, seed
        self.rd_name = cfg.get("rd_model", "gaussian")
        self.meta = {
            "mpamp": __version__,
            "config_sha256": cfg.digest,
            "seed": seed,
            "rd_model": self.rd_name,
            "zero_rate": ZERO_RATE_CONVENTION,
        }
        self.meta.update(extra or {})
        os.makedirs(out, exist_ok=True)

    def header(self):
        return "# " + " ".join(f"{k}={_fmt(v)}" for k, v in self.meta.items())

    def write_csv(self, name, rows):
        path = os.path.join(self.out, name)
        with open(path, "w", newline="") as fh:
            fh.write(self.header() + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SCHEMAS[name])
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        return path

    def write_json(self, name, doc):
        path = os.path.join(self.out, name)
        with open(path, "w") as fh:
            json.dump({"provenance": self.meta, **doc}, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _cost(cfg):
    kind, val = cfg.cost_args()
    return CostModel.from_relative(val) if kind == "b" else CostModel(*val)


def _grid_kw(cfg):
    return dict(cfg.get("grids", {}))


def _schedule(cfg, args):
    path = getattr(args, "schedule", None) or cfg.get("schedule_csv")
    if path:
        return read_schedule_csv(path)
    if "schedule" in cfg.raw:
        rates = [parse_rate(r) for r in cfg.raw["schedule"]]
        if not rates:
            raise ConfigError("key 'schedule' is empty")
        return rates
    return None


def cmd_se(args, cfg, run):
    params = cfg.params
    rd = make_rd_model(run.rd_name)
    rates = _schedule(cfg, args)
    if rates is None:
        rates = [math.inf] * int(cfg.get("T", 60))
    mm = mmse(params)
    traj = se_trajectory(rates, params, rd, mmse_value=mm)
    rows = [(t, traj.sigma_sq[t - 1], traj.distortion[t - 1], traj.mse[t - 1], traj.emse[t - 1])
            for t in range(1, len(traj) + 1)]
    run.write_csv("trajectory.csv", rows)
    return traj


def _solve(cfg, params, cost, delta, rd, mm):
    grids = DpGrids.build(params, delta, **_grid_kw(cfg))
    policy = build_policy(params, cost, grids, rd, mmse_value=mm)
    sched, traj = recover_schedule(policy, params, grids, rd, mmse_value=mm)
    return sched, traj, policy, grids


def cmd_dp(args, cfg, run):
    params = cfg.params
    rd = make_rd_model(run.rd_name)
    cost = _cost(cfg)
    mm = mmse(params)
    delta = cfg.resolve_delta(mm)
    if delta <= mm:
        raise InfeasibleError(f"delta={delta:.6g} is not above MMSE={mm:.6g}")
    sched, traj, policy, grids = _solve(cfg, params, cost, delta, rd, mm)
    rows = [(t, sched.rates[t - 1], traj.sigma_sq[t - 1], traj.distortion[t - 1], traj.mse[t - 1],
             traj.emse[t - 1]) for t in range(1, len(sched) + 1)]
    run.write_csv("schedule.csv", rows)
    run.write_json("summary.json", {
        "T": sched.T,
        "R_agg": sched.R_agg,
        "total_cost": sched.total_cost,
        "mmse": mm,
        "delta": delta,
        "final_mse": traj.final_mse,
        "C1": cost.C1,
        "C2": cost.C2,
        "b": _num(cost.b),
        "horizon_used": policy.horizon_used,
        "rd_model": run.rd_name,
        "zero_rate_convention": ZERO_RATE_CONVENTION,
        "terminal_rate_rule": TERMINAL_RULE,
        "state_grid": "log-spaced excess over lossless fixed point, upward snapping",
        "tie_break": "smaller rate first (no-ops early, real iterations late)",
        "grids": {"n_states": len(grids.sigma_grid), "rate_step": float(grids.rate_grid[1]),
                  "rate_max": float(grids.rate_grid[-1]), "max_horizon": grids.max_horizon},
    })
    return sched, traj


def cmd_pareto(args, cfg, run):
    params = cfg.params
    rd = make_rd_model(run.rd_name)
    pc = cfg.get("pareto", {})
    b_list = pc.get("b_list", [0.3, 1, 2, 6])
    d_list = pc.get("delta_over_mmse_list", [2, 3, 4, 5, 6])
    burn_in = pc.get("burn_in", 6)
    mm = mmse(params)
    pts = sweep(params, b_list, d_list, _grid_kw(cfg), rd, workers=args.threads, relative=True)
    run.write_csv("points.csv", [(p.b, p.delta_over_mmse, p.T, p.R_agg, p.mse, p.emse, p.total_cost) for p in pts])

    front = pareto_filter(pts)
    report = convexity_check(front, tol=pc.get("hull_tol", 0.02)) if len(front.points) >= 3 else None

    fit_b = pc.get("fit_b", 2.0)
    target = pc.get("fit_emse_target", 5e-5)
    sched, traj, _, _ = _solve(cfg, params, CostModel.from_relative(fit_b), mm + target, rd, mm)
    fit_pts = [p for p in pts if p.b == fit_b]
    fit = fit_conjecture(sched, traj, fit_pts, burn_in=burn_in)
    cf = fit.cost_fit
    run.write_csv("fits.csv", [(fit_b, burn_in, fit.C4, fit.C5, fit.rate_r2, fit.C7, fit.C8, fit.emse_r2, fit.C6,
                                fit.C7_distortion, fit.distortion_r2, cf.slope if cf else math.nan,
                                cf.r2 if cf else math.nan, fit.cost_corr)])
    run.write_json("pareto_summary.json", {
        "mmse": mm,
        "n_points": len(pts),
        "failures": pts.failures,
        "frontier": [list(p.coords) for p in front.points],
        "hull_violation": report.hull_violation if report else None,
        "convexity_pass": report.passed if report else None,
        "monotonicity_violations": [list(v) for v in monotonicity_violations(pts)],
        "fit_schedule": sched.rates,
    })
    if report is not None:
        print(report)
    return pts, fit, report


def cmd_rd(args, cfg, run):
    rc = cfg.get("rd", {})
    if rc.get("source", "gaussian") == "gaussian":
        src = discretize_gaussian(rc.get("variance", 1.0), rc.get("n_points", 401), rc.get("half_width", 6.0))
    else:
        s = rc.get("sigma_sq", cfg.params.sigma1_sq)
        src = node_marginal(s, cfg.params, rc.get("n_points", 201), rc.get("half_width", 8.0))
    v = src.variance
    slopes = rc.get("slopes") or list(np.geomspace(0.6 / v, 200 / v, 16))
    pts = rd_sweep(src, slopes)
    run.write_csv("rd.csv", [(p.rate, p.distortion) for p in pts])
    return pts


def _se_for(cfg, rates, rd):
    mm = mmse(cfg.params)
    return se_trajectory(rates, cfg.params, rd, mmse_value=mm)


def cmd_simulate(args, cfg, run):
    from .sim import run_trials

    rates = _schedule(cfg, args)
    if rates is None:
        raise ConfigError("missing required key 'schedule' (or 'schedule_csv' / --schedule)")
    cfg.require("N")
    rd = make_rd_model(run.rd_name)
    recs = run_trials(cfg.params, rates, cfg.raw["N"], cfg.get("trials", 1), seed=run.seed,
                      quant_mode=cfg.get("quant_mode", "gaussian"), rd_model=rd, workers=args.threads)
    traj = _se_for(cfg, rates, rd)
    rows = [(k, t, rec.mse[t - 1], traj.mse[t - 1], rec.sigma_hat_sq[t - 1], rec.bytes_billed[t - 1])
            for k, rec in enumerate(recs) for t in range(1, len(rec) + 1)]
    run.write_csv("runrecord.csv", rows)
    return recs, traj


def cmd_harness(args, cfg, run):
    from .harness import run_harness
    from .sim import generate_instance

    rates = _schedule(cfg, args)
    if rates is None:
        raise ConfigError("missing required key 'schedule' (or 'schedule_csv' / --schedule)")
    cfg.require("N")
    rd = make_rd_model(run.rd_name)
    inst = generate_instance(cfg.params, cfg.raw["N"], run.seed)
    rec, ledger = run_harness(inst, rates, cfg.get("quant_mode", "gaussian"), rd,
                              transport=args.transport or cfg.get("transport", "channel"))
    traj = _se_for(cfg, rates, rd)
    run.write_csv("ledger.csv", list(ledger.rows()))
    run.write_csv("runrecord.csv", [(0, t, rec.mse[t - 1], traj.mse[t - 1], rec.sigma_hat_sq[t - 1],
                                     rec.bytes_billed[t - 1]) for t in range(1, len(rec) + 1)])
    return rec, ledger


COMMANDS = {
    "se": cmd_se,
    "rd": cmd_rd,
    "dp": cmd_dp,
    "pareto": cmd_pareto,
    "simulate": cmd_simulate,
    "harness": cmd_harness,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON experiment configuration")
    common.add_argument("--out", default="out", help="output directory (default: ./out)")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads; 1 is bit-reproducible")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mpamp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mpamp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("se", parents=[common], help="state-evolution trajectory")
    sub.add_parser("rd", parents=[common], help="Blahut-Arimoto R(D) sweep")
    sub.add_parser("dp", parents=[common], help="optimal coding-rate schedule")
    sub.add_parser("pareto", parents=[common], help="(b, delta) sweep, frontier, fits")
    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo MP-AMP vs SE")
    sim.add_argument("--schedule", help="schedule CSV with a rate_bits column")
    har = sub.add_parser("harness", parents=[common], help="multi-worker MP-AMP with byte ledger")
    har.add_argument("--schedule", help="schedule CSV with a rate_bits column")
    har.add_argument("--nodes", type=int, default=None, help="number of node workers P")
    har.add_argument("--transport", choices=["channel", "socket"], default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = {"seed": args.seed}
        if getattr(args, "nodes", None) is not None:
            overrides["P"] = args.nodes
        cfg = load_config(args.config, overrides)
        seed = cfg.get("seed", 0)
        run = Run(cfg, args.out, seed, {"command": args.command})
        COMMANDS[args.command](args, cfg, run)
    except (ConfigError, DomainError) as exc:
        print(f"mpamp: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"mpamp: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalError, HorizonCapError, GridCoverageError) as exc:
        print(f"mpamp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MpampError as exc:
        print(f"mpamp: error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
