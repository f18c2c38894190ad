"""Command-line front end.

Verbs: analyze (closed-form delay at a fixed schedule), optimize (adaptive
schedule search), simulate (Monte Carlo run), sweep <name> (experiment
grids), validate (simulation vs closed forms with pass/fail gates).

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments, optimizer, queueing, simulator
from .blocklength import BlocklengthMatrix
from .config import ConfigError, SystemConfig, apply_overrides, load_config, reference_config

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_VALIDATION = 3


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _fmt_ms(value: float) -> str:
    return "" if math.isnan(value) else format(value, ".6g")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_blocklengths(path: str, cfg: SystemConfig) -> BlocklengthMatrix:
    n = np.full((cfg.k_users, cfg.q_th + 1), np.nan)
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        for row in reader:
            n[int(row["k"]), int(row["q"])] = float(row["n_symbols"])
    if np.any(np.isnan(n)):
        raise ConfigError(f"blocklength file {path} does not cover every (k, q) cell")
    return BlocklengthMatrix(n, cfg.w_hz)


def _schedule_from_args(args, cfg: SystemConfig) -> BlocklengthMatrix:
    if getattr(args, "blocklengths", None):
        return _load_blocklengths(args.blocklengths, cfg)
    tti = getattr(args, "tti_ms", None) or 1.0
    return BlocklengthMatrix.from_tti_ms(tti, cfg.k_users, cfg.q_th, cfg.w_hz)


def _cmd_analyze(args, cfg: SystemConfig, out: Path) -> int:
    n = _schedule_from_args(args, cfg)
    bd = queueing.average_access_delay(n, cfg)
    p_suc = queueing.success_prob_matrix(n, cfg)
    if not np.all(np.isfinite(bd.access_ms)):
        raise ArithmeticError("non-finite access delay in analysis")
    rows = [
        [k, _fmt_ms(bd.queuing_ms[k]), _fmt_ms(bd.transmission_ms[k]),
         _fmt_ms(bd.overhead_ms[k]), _fmt_ms(bd.access_ms[k])]
        for k in range(cfg.k_users)
    ]
    _write_csv(out / "delays.csv",
               ["k", "queuing_ms", "transmission_ms", "overhead_ms", "access_ms"], rows)
    prows = [
        [k, q, _fmt(float(n.n[k, q])), _fmt(float(p_suc[k, q]))]
        for k in range(cfg.k_users)
        for q in range(cfg.q_th + 1)
    ]
    _write_csv(out / "success_probs.csv", ["k", "q", "n_symbols", "p_suc"], prows)
    print(f"average access delay: {bd.average_access_ms:.6g} ms")
    print(f"  queuing      : {bd.queuing_ms.mean():.6g} ms")
    print(f"  transmission : {bd.transmission_ms.mean():.6g} ms")
    print(f"  overhead part: {bd.overhead_ms.mean():.6g} ms")
    print(f"wrote {out / 'delays.csv'} and {out / 'success_probs.csv'}")
    return EXIT_OK


def _cmd_optimize(args, cfg: SystemConfig, out: Path) -> int:
    res = optimizer.alternating_optimize(cfg)
    rounded = res.n_opt.rounded()
    rows = [
        [k, q, _fmt(float(res.n_opt.n[k, q])), int(rounded.n[k, q])]
        for k in range(cfg.k_users)
        for q in range(cfg.q_th + 1)
    ]
    _write_csv(out / "optimized_blocklengths.csv", ["k", "q", "n_symbols", "n_rounded"], rows)
    trows = [
        [r.outer, r.block, r.inner_iters, _fmt(r.lagrangian), _fmt(r.objective),
         _fmt(r.max_violation), _fmt(r.consensus_gap), _fmt(r.accepted)]
        for r in res.records
    ]
    _write_csv(
        out / "optimizer_trace.csv",
        ["outer", "block", "inner_iters", "lagrangian", "objective",
         "max_violation", "consensus_gap", "accepted"],
        trows,
    )
    print(f"optimized average access delay: {res.objective * 1e3:.6g} ms "
          f"(rounded schedule: {res.objective_rounded * 1e3:.6g} ms)")
    print(f"feasible: {res.feasible}; outer sweeps: {len(res.trace) - 1}; "
          f"converged: {res.converged}")
    if res.warning:
        print(f"warning: {res.warning}")
    print(f"wrote {out / 'optimized_blocklengths.csv'} and {out / 'optimizer_trace.csv'}")
    return EXIT_OK


def _cmd_simulate(args, cfg: SystemConfig, out: Path) -> int:
    n = _schedule_from_args(args, cfg).rounded()
    sc = simulator.SimConfig.from_system(cfg, n)
    stats = simulator.simulate(sc)
    rows = []
    for k in range(cfg.k_users):
        for q in range(cfg.q_th + 1):
            for metric, arr in (
                ("attempts", stats.attempts),
                ("successes", stats.successes),
                ("success_rate", stats.success_rate),
                ("success_ci95", stats.success_ci95),
                ("retx_count", stats.retx_count),
                ("retx_mean", stats.retx_mean),
                ("queue_dist", stats.queue_dist),
            ):
                rows.append([metric, k, q, _fmt(float(arr[k, q]))])
    for k in range(cfg.k_users):
        for metric, arr in (
            ("generated", stats.generated),
            ("delivered", stats.delivered),
            ("dropped_cr", stats.dropped_cr),
            ("dropped_overflow", stats.dropped_overflow),
            ("still_queued", stats.still_queued),
        ):
            rows.append([metric, k, -1, int(arr[k])])
    for name, ds in (("queuing", stats.queuing), ("transmission", stats.transmission),
                     ("access", stats.access)):
        for stat in ("count", "mean_ms", "p50_ms", "p95_ms", "p99_ms", "ci95_ms"):
            rows.append([f"{name}_{stat}", -1, -1, _fmt(float(getattr(ds, stat)))])
    rows.append(["mean_contenders", -1, -1, _fmt(stats.mean_contenders)])
    _write_csv(out / "sim_stats.csv", ["metric", "k", "q", "value"], rows)
    print(f"simulated {stats.slots} slots x {cfg.k_users} users "
          f"({stats.replications} replication(s))")
    print(f"access delay: mean {stats.access.mean_ms:.6g} ms, "
          f"p95 {stats.access.p95_ms:.6g} ms, p99 {stats.access.p99_ms:.6g} ms")
    print(f"delivered {int(stats.delivered.sum())}, dropped (CR) {int(stats.dropped_cr.sum())}, "
          f"dropped (overflow) {int(stats.dropped_overflow.sum())}")
    print(f"wrote {out / 'sim_stats.csv'}")
    return EXIT_OK


def _cmd_sweep(args, cfg: SystemConfig, out: Path) -> int:
    runner = experiments.SWEEPS[args.name]
    result = runner(cfg, threads=args.threads)
    for row in result.rows:
        if isinstance(row.get("status"), str) and row["status"].startswith("failed"):
            print(f"grid point flagged: {row}", file=sys.stderr)
    csv_path = out / f"{args.name}.csv"
    experiments.emit_csv(result, csv_path)
    experiments.emit_plot_data(result, out / f"{args.name}_plot.csv")
    print(f"wrote {csv_path} and {out / (args.name + '_plot.csv')}")
    return EXIT_OK


def _cmd_validate(args, cfg: SystemConfig, out: Path) -> int:
    n = _schedule_from_args(args, cfg).rounded()
    sc = simulator.SimConfig.from_system(cfg, n)
    stats = simulator.simulate(sc)
    report = simulator.empirical_vs_analytic_report(stats, sc)
    header = ["quantity", "k", "q", "samples", "empirical", "analytic", "z", "flag"]
    if sc.contention == "backlogged":
        header.append("realized_pred")
    rows = [[_fmt(r.get(col)) for col in header] for r in report.rows]
    _write_csv(out / "validation.csv", header, rows)
    print(report.summary())
    print(f"wrote {out / 'validation.csv'}")
    return EXIT_OK if report.gates.passed else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gfdelay",
        description="Access-delay analysis, blocklength optimization, and "
        "simulation for grant-free short-packet uplink.",
    )
    parser.add_argument("--config", help="config file (defaults to the built-in reference)")
    parser.add_argument("--seed", type=int, help="override experiment.seed")
    parser.add_argument("--out-dir", default="results", help="output directory")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config key (repeatable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_analyze = sub.add_parser("analyze", help="closed-form delay at a fixed schedule")
    p_optimize = sub.add_parser("optimize", help="optimize the blocklength schedule")
    p_simulate = sub.add_parser("simulate", help="Monte Carlo simulation at a fixed schedule")
    p_sweep = sub.add_parser("sweep", help="run an experiment sweep")
    p_sweep.add_argument("name", choices=sorted(experiments.SWEEPS))
    p_validate = sub.add_parser("validate", help="simulation vs analytic model with gates")
    for p in (p_analyze, p_simulate, p_validate):
        p.add_argument("--tti-ms", type=float, help="uniform TTI for the schedule (default 1.0)")
        p.add_argument("--blocklengths", help="CSV with k,q,n_symbols columns")
    _ = p_optimize
    return parser


_COMMANDS = {
    "analyze": _cmd_analyze,
    "optimize": _cmd_optimize,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else reference_config()
        if args.overrides:
            cfg = apply_overrides(cfg, args.overrides)
        if args.seed is not None:
            cfg = replace(cfg, exp=replace(cfg.exp, seed=args.seed))
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, experiments.NumericalFailure, optimizer.MonotonicityError,
            queueing.DegenerateChainError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
