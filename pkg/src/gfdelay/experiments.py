"""Experiment sweeps, result tables, and reproducible CSV emission.

Each sweep evaluates a grid of scenarios point by point and collects one row
per point. Grid points are independent; with several worker threads they run
concurrently and are merged back in grid order, so parallelism never changes
the output. A failed or non-finite point is flagged in its row and the sweep
continues. Every result embeds the config hash, the seed, and the package
version, and CSV bytes are reproducible for identical (config, seed) pairs:
delays are written in ms with 6 significant digits, everything else with
full-precision shortest repr, and no timestamps appear anywhere.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import __version__, fbl, optimizer, queueing
from .blocklength import BlocklengthMatrix
from .config import SystemConfig, config_hash
from .simulator import SimConfig, simulate


class NumericalFailure(RuntimeError):
    """A sweep point produced a non-finite quantity."""


@dataclass
class ExperimentResult:
    """One sweep's output table plus provenance."""

    experiment_id: str
    swept: str
    grid: tuple
    columns: tuple[str, ...]
    rows: list[dict]
    provenance: dict

    def column(self, name: str) -> list:
        return [row[name] for row in self.rows]


def _provenance(cfg: SystemConfig) -> dict:
    return {
        "config_hash": config_hash(cfg),
        "seed": cfg.exp.seed,
        "version": __version__,
    }


def _fmt_value(column: str, value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".6g") if column.endswith("_ms") else repr(value)
    return str(value)


def emit_csv(result: ExperimentResult, path) -> None:
    """Write the result table; first line is a provenance comment."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        prov = result.provenance
        fh.write(
            f"# experiment={result.experiment_id} config_hash={prov['config_hash']} "
            f"seed={prov['seed']} version={prov['version']}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(result.columns)
        for row in result.rows:
            writer.writerow([_fmt_value(c, row.get(c)) for c in result.columns])


def emit_plot_data(result: ExperimentResult, path) -> None:
    """x/y column view: the swept value first, then each numeric series."""
    numeric = [
        c
        for c in result.columns
        if c != result.swept
        and all(isinstance(r.get(c), (int, float)) or r.get(c) is None for r in result.rows)
    ]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{result.swept}"] + numeric)
        for row in result.rows:
            writer.writerow(
                [_fmt_value(result.swept, row.get(result.swept))]
                + [_fmt_value(c, row.get(c)) for c in numeric]
            )


def _check_finite(point: dict, keys: list[str]) -> None:
    for key in keys:
        val = point.get(key)
        if isinstance(val, float) and not math.isfinite(val):
            raise NumericalFailure(f"non-finite {key} = {val!r}")


def _map_grid(points, worker, threads: int) -> list:
    if threads <= 1:
        return [worker(p) for p in points]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, points))


def _baseline_col(tti_ms: float) -> str:
    return f"fixed_{_fmt_value('', float(tti_ms)).replace('.', 'p')}_ms"


def run_success_prob_sweep(
    cfg: SystemConfig, n_grid=None, k_grid=None, threads: int = 1
) -> ExperimentResult:
    """Success probability over a (user count, blocklength) grid."""
    n_grid = tuple(n_grid if n_grid is not None else cfg.exp.n_grid)
    k_grid = tuple(k_grid if k_grid is not None else cfg.exp.k_grid)
    if not n_grid or not k_grid:
        raise ValueError("grids must be non-empty")
    ch = cfg.channel()

    def worker(point):
        k, n = point
        p_err = fbl.packet_error_prob(float(n), cfg.b_bits, ch)
        p_one = fbl.collision_avoidance_prob(k, cfg.m_pre)
        row = {
            "k_users": k,
            "n_symbols": n,
            "p_err": p_err,
            "p_one": p_one,
            "p_suc": (1.0 - p_err) * p_one,
        }
        _check_finite(row, ["p_err", "p_one", "p_suc"])
        return row

    points = [(k, n) for k in k_grid for n in n_grid]
    rows = _map_grid(points, worker, threads)
    return ExperimentResult(
        experiment_id="success-prob",
        swept="n_symbols",
        grid=points,
        columns=("k_users", "n_symbols", "p_err", "p_one", "p_suc"),
        rows=rows,
        provenance=_provenance(cfg),
    )


def _optimize_point(cfg: SystemConfig) -> tuple[optimizer.OptimizeResult, dict]:
    res = optimizer.alternating_optimize(cfg)
    row = {
        "adaptive_ms": res.objective * 1e3,
        "adaptive_rounded_ms": res.objective_rounded * 1e3,
        "feasible": res.feasible,
        "status": "ok" if res.converged else "cap-reached",
    }
    for tti in cfg.baseline_ttis_ms:
        nb = BlocklengthMatrix.from_tti_ms(tti, cfg.k_users, cfg.q_th, cfg.w_hz)
        row[_baseline_col(tti)] = queueing.average_access_delay(nb, cfg).average_access_ms
    return res, row


def run_delay_vs_users(cfg: SystemConfig, k_grid=None, threads: int = 1) -> ExperimentResult:
    """Optimized vs fixed-TTI delay across user counts, with simulation."""
    k_grid = tuple(k_grid if k_grid is not None else cfg.exp.k_grid)
    if not k_grid:
        raise ValueError("k_grid must be non-empty")

    def worker(k):
        point_cfg = replace(cfg, k_users=k)
        row = {"k_users": k}
        try:
            res, opt_row = _optimize_point(point_cfg)
            row.update(opt_row)
            sc = SimConfig.from_system(
                point_cfg,
                res.n_opt.rounded(),
                horizon=cfg.exp.sweep_horizon,
                replications=1,
            )
            stats = simulate(sc)
            row["sim_adaptive_ms"] = stats.access.mean_ms
            row["sim_ci95_ms"] = stats.access.ci95_ms
            _check_finite(row, [c for c in row if c.endswith("_ms")])
        except (ArithmeticError, NumericalFailure, ValueError) as exc:
            row["status"] = f"failed: {exc}"
        return row

    rows = _map_grid(list(k_grid), worker, threads)
    columns = (
        "k_users",
        "adaptive_ms",
        "adaptive_rounded_ms",
        *(_baseline_col(t) for t in cfg.baseline_ttis_ms),
        "sim_adaptive_ms",
        "sim_ci95_ms",
        "feasible",
        "status",
    )
    return ExperimentResult(
        experiment_id="delay-vs-users",
        swept="k_users",
        grid=k_grid,
        columns=columns,
        rows=rows,
        provenance=_provenance(cfg),
    )


def run_delay_vs_bits(
    cfg: SystemConfig, b_grid=None, lambda_list=None, threads: int = 1
) -> ExperimentResult:
    """Optimized vs fixed-TTI delay across packet sizes and arrival rates."""
    b_grid = tuple(b_grid if b_grid is not None else cfg.exp.b_grid)
    lambdas = tuple(lambda_list if lambda_list is not None else cfg.exp.lambda_list)
    if not b_grid or not lambdas:
        raise ValueError("grids must be non-empty")

    def worker(point):
        lam, b = point
        point_cfg = replace(cfg, b_bits=float(b), lambda_rate=lam)
        row = {"lambda_rate": lam, "b_bits": b}
        try:
            _, opt_row = _optimize_point(point_cfg)
            row.update(opt_row)
            _check_finite(row, [c for c in row if c.endswith("_ms")])
        except (ArithmeticError, NumericalFailure, ValueError) as exc:
            row["status"] = f"failed: {exc}"
        return row

    points = [(lam, b) for lam in lambdas for b in b_grid]
    rows = _map_grid(points, worker, threads)
    columns = (
        "lambda_rate",
        "b_bits",
        "adaptive_ms",
        "adaptive_rounded_ms",
        *(_baseline_col(t) for t in cfg.baseline_ttis_ms),
        "feasible",
        "status",
    )
    return ExperimentResult(
        experiment_id="delay-vs-bits",
        swept="b_bits",
        grid=points,
        columns=columns,
        rows=rows,
        provenance=_provenance(cfg),
    )


def run_blocklength_profile(cfg: SystemConfig, threads: int = 1) -> ExperimentResult:
    """Optimized blocklength per packet index next to the fixed baselines."""
    res = optimizer.alternating_optimize(cfg)
    per_q = res.n_opt.n.mean(axis=0)
    rows = []
    for q in range(cfg.q_th + 1):
        row = {
            "q": q,
            "adaptive_symbols": float(per_q[q]),
            "adaptive_user0_symbols": float(res.n_opt.n[0, q]),
        }
        for tti in cfg.baseline_ttis_ms:
            row[f"fixed_{_fmt_value('', float(tti)).replace('.', 'p')}_symbols"] = (
                tti * 1e-3 * cfg.w_hz
            )
        rows.append(row)
    columns = (
        "q",
        "adaptive_symbols",
        "adaptive_user0_symbols",
        *(f"fixed_{_fmt_value('', float(t)).replace('.', 'p')}_symbols" for t in cfg.baseline_ttis_ms),
    )
    return ExperimentResult(
        experiment_id="blocklength-profile",
        swept="q",
        grid=tuple(range(cfg.q_th + 1)),
        columns=columns,
        rows=rows,
        provenance=_provenance(cfg),
    )


SWEEPS = {
    "success-prob": run_success_prob_sweep,
    "delay-vs-users": run_delay_vs_users,
    "delay-vs-bits": run_delay_vs_bits,
    "blocklength-profile": run_blocklength_profile,
}
