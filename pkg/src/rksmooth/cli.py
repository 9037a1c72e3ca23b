"""``rk-smooth`` command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 divergence,
4 optimizer hit its iteration limit (outputs are still written).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .core import DivergedSimulation, RKSmoothError
from .evaluate import nls_rank_study, rmse, run_experiment_matrix, summarize, sweep_alpha, sweep_lambda
from .io import MalformedFile, read_trajectory, write_json, write_table, write_trajectory
from .noise import corrupt
from .smoother import DivergedSmoothing, smooth

log = logging.getLogger("rksmooth")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_MAX_ITER = 0, 2, 3, 4
COMMANDS = ("simulate", "corrupt", "smooth", "compare", "sweep-lambda", "sweep-alpha", "nls-rank")

REPORT_COLUMNS = ["experiment_id", "method", "noise_kind", "level", "seed", "rmse", "rmse_trimmed",
                  "theta", "theta_rel_error", "iterations", "reason", "config_hash", "error"]


class UsageError(RKSmoothError, ValueError):
    pass


def parse_seeds(text: str) -> list[int]:
    """``"1,2,5-7"`` -> ``[1, 2, 5, 6, 7]``."""
    seeds = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = (int(v) for v in part.split("-", 1))
                if hi < lo:
                    raise ValueError(part)
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
    except ValueError as exc:
        raise UsageError(f"bad seed list {text!r}") from exc
    if not seeds or min(seeds) < 0:
        raise UsageError("seeds must be non-negative integers")
    return seeds


def resolve_threads(arg: int | None) -> int:
    if arg is not None:
        value = arg
    else:
        env = os.environ.get("RK_SMOOTH_THREADS", "").strip()
        if not env:
            return 1
        try:
            value = int(env)
        except ValueError as exc:
            raise UsageError(f"RK_SMOOTH_THREADS must be an integer, got {env!r}") from exc
    if value < 1:
        raise UsageError("thread count must be at least 1")
    return value


def _input_path(cfg: RunConfig, config_path: Path) -> Path:
    if cfg.input is None:
        raise UsageError("this command needs an 'input' trajectory path in the config")
    p = Path(cfg.input)
    return p if p.is_absolute() else config_path.parent / p


def _report_rows(reports) -> list[dict]:
    rows = []
    for r in reports:
        d = r.record()
        d["noise_kind"] = r.noise["kind"]
        d["level"] = float(r.noise["level"])
        d["theta"] = " ".join(f"{v:.17g}" for v in r.theta)
        d["theta_rel_error"] = " ".join(f"{v:.17g}" for v in r.theta_rel_error)
        rows.append(d)
    return rows


def cmd_simulate(cfg: RunConfig, out: Path, args) -> int:
    traj = cfg.system_spec().truth()
    write_trajectory(out / "trajectory.csv", traj)
    return EXIT_OK


def cmd_corrupt(cfg: RunConfig, out: Path, args) -> int:
    traj = read_trajectory(_input_path(cfg, args.config))
    for seed in cfg.seeds:
        write_trajectory(out / f"measurements_seed{seed}.csv", corrupt(traj, cfg.noise.spec(seed)))
    return EXIT_OK


def cmd_smooth(cfg: RunConfig, out: Path, args) -> int:
    Y = read_trajectory(_input_path(cfg, args.config))
    model = cfg.system.model()
    theta_init = None
    if model.q_free:
        theta_init = cfg.system.spec().initial_theta()
    res = smooth(Y, model, cfg.smoother.build(theta_init))
    write_trajectory(out / "estimate.csv", res.states)
    diag = {
        "system": cfg.system.name,
        "param_names": list(type(model).param_names),
        "theta": [float(v) for v in res.theta],
        "free": [bool(v) for v in model.free],
        "iterations": res.iterations,
        "evaluations": res.evaluations,
        "cost": res.cost,
        "grad_norm": res.grad_norm,
        "reason": res.reason,
        "line_search_failed": res.line_search_failed,
    }
    if cfg.reference is not None:
        ref_path = Path(cfg.reference)
        if not ref_path.is_absolute():
            ref_path = args.config.parent / ref_path
        ref = read_trajectory(ref_path)
        diag["rmse"] = rmse(res.states, ref)
        diag["rmse_trimmed"] = rmse(res.states, ref, cfg.trim)
    write_json(out / "result.json", diag)
    return EXIT_MAX_ITER if res.reason == "max_iter" else EXIT_OK


def cmd_compare(cfg: RunConfig, out: Path, args) -> int:
    reports = run_experiment_matrix([cfg.system_spec()], cfg.noise_specs(), cfg.methods, cfg.seeds,
                                    cfg.experiment_config(), workers=args.threads)
    for r in reports:
        log.info("%s seed=%d rmse=%.4g %.2fs%s", r.experiment_id, r.seed, r.rmse, r.seconds,
                 f" error={r.error}" if r.error else "")
    write_table(out / "reports.csv", _report_rows(reports), REPORT_COLUMNS)
    write_json(out / "summary.json", {"cells": summarize(reports), "reports": [r.record() for r in reports]})
    return EXIT_OK


def cmd_sweep_lambda(cfg: RunConfig, out: Path, args) -> int:
    reports, rows = sweep_lambda(cfg.system_spec(), cfg.noise.spec(), cfg.sweep.lambdas, cfg.sweep.norms,
                                 cfg.seeds, cfg.experiment_config(), workers=args.threads)
    write_table(out / "sweep_lambda.csv", rows, list(rows[0]))
    write_table(out / "sweep_lambda_reports.csv", _report_rows(reports), REPORT_COLUMNS)
    return EXIT_OK


def cmd_sweep_alpha(cfg: RunConfig, out: Path, args) -> int:
    reports, rows = sweep_alpha(cfg.system_spec(), cfg.noise.spec(), cfg.sweep.alphas, cfg.seeds,
                                cfg.experiment_config(), workers=args.threads)
    write_table(out / "sweep_alpha.csv", rows, list(rows[0]))
    write_table(out / "sweep_alpha_reports.csv", _report_rows(reports), REPORT_COLUMNS)
    return EXIT_OK


def cmd_nls_rank(cfg: RunConfig, out: Path, args) -> int:
    if cfg.system.name != "nls":
        raise UsageError("nls-rank needs system.name = 'nls'")
    rep = nls_rank_study(cfg.system_spec(), cfg.rank.levels, cfg.seeds[0], cfg.smoother.build(),
                         cfg.rank.threshold, cfg.noise.kind, workers=args.threads)
    write_table(out / "rank.csv", rep.rows(), ["data", "level", "rank", "rmse", "reason"])
    write_json(out / "rank.json", vars(rep))
    return EXIT_OK


HANDLERS = {
    "simulate": cmd_simulate,
    "corrupt": cmd_corrupt,
    "smooth": cmd_smooth,
    "compare": cmd_compare,
    "sweep-lambda": cmd_sweep_lambda,
    "sweep-alpha": cmd_sweep_alpha,
    "nls-rank": cmd_nls_rank,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rk-smooth", description="Runge-Kutta denoising of noisy trajectories.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    p.add_argument("--out", type=Path, help="output directory (overrides output_dir in the config)")
    p.add_argument("--seeds", help="comma list or ranges, e.g. 0-9 (overrides the config)")
    p.add_argument("--threads", type=int, help="worker processes (default: RK_SMOOTH_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        args.threads = resolve_threads(args.threads)
        cfg = load_config(args.config)
        if args.seeds is not None:
            cfg = cfg.model_copy(update={"seeds": parse_seeds(args.seeds)})
        out = args.out or Path(cfg.output_dir or ".")
        return HANDLERS[args.command](cfg, out, args)
    except (ConfigError, UsageError, MalformedFile) as exc:
        print(f"rk-smooth: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DivergedSimulation, DivergedSmoothing) as exc:
        print(f"rk-smooth: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (RKSmoothError, ValueError) as exc:
        print(f"rk-smooth: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
