"""Command-line entry point: ``bcpinn {oracle,train,eval,sweep}``.

Exit codes: 0 success, 1 user error (bad config, missing files), 2 numerical
failure (non-finite loss, reference blow-up). ``BCPINN_WORKERS`` overrides the
worker count of ``train`` (loss chunks) and ``sweep`` (one run per worker).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .autodiff import NonFiniteLossError
from .config import ConfigFileError, RunConfig, load_config, parse_override
from .net import CheckpointError, ConfigurationError, DomainBox, load_checkpoint, save_checkpoint
from .oracle import (BlowUpError, ReferenceFormatError, export_csv, read_reference,
                     solve_reference, write_reference)
from .pde import AllenCahnParams, CahnHilliardParams, PdeProblem, ProblemKind
from .reports import write_evaluation
from .sweep import SWEEP_MODELS, SweepSettings, format_table, run_sweep
from .trainer import train_bc_pinn, train_standard_pinn

EXIT_OK, EXIT_USER, EXIT_NUMERICAL = 0, 1, 2
WORKERS_ENV = "BCPINN_WORKERS"

log = logging.getLogger("bcpinn")


class UserError(Exception):
    pass


def _workers(flag: int | None, default: int) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(WORKERS_ENV)
    if env is None:
        return default
    try:
        n = int(env)
    except ValueError:
        raise UserError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    if n < 1:
        raise UserError(f"{WORKERS_ENV} must be >= 1")
    return n


def _config(args) -> RunConfig:
    overrides = dict(parse_override(s) for s in args.set or [])
    for name, key in (("seed", "seed"), ("variant", "variant"), ("method", "method"),
                      ("problem", "problem.kind")):
        value = getattr(args, name, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def problem_from_manifest(cfg: dict) -> PdeProblem:
    p = dict(cfg["problem"])
    kind = ProblemKind(p.pop("kind"))
    n_d = p.pop("boundary_order")
    params = AllenCahnParams(**p) if kind is ProblemKind.AC else CahnHilliardParams(**p)
    return PdeProblem(kind, params, n_d, DomainBox(t_max=cfg["schedule"]["T"]))


def cmd_oracle(args) -> int:
    if args.config or args.set:
        cfg = _config(args)
        target, T = cfg.problem, cfg.schedule.T
    else:
        target, T = args.problem.upper(), args.T
        if target == "CHPS" or target == "CH4":
            target = "CH"
    start = time.perf_counter()
    sol = solve_reference(target, nx=args.nx, dt=args.dt, snapshots=args.snapshots, T=T,
                          method=args.integrator, dealias=not args.no_dealias)
    write_reference(sol, args.out)
    if args.csv:
        export_csv(sol, args.csv)
    print(f"wrote {args.out} ({sol.nt} snapshots x {sol.nx} points, "
          f"{time.perf_counter() - start:.1f}s)")
    return EXIT_OK


def _manifest(cfg: RunConfig, run, argv, wall, files) -> dict:
    return {
        "version": __version__,
        "argv": argv,
        "config": cfg.as_dict(),
        "seed": cfg.seed,
        "method": cfg.method,
        "variant": cfg.variant,
        "status": run.status,
        "error": run.error,
        "segments_completed": run.segments_completed,
        "terminations": run.terminations,
        "timings": run.timings,
        "wall_clock": wall,
        "files": files,
    }


def cmd_train(args) -> int:
    cfg = _config(args)
    schedule, train = cfg.effective()
    train = replace(train, workers=_workers(args.workers, train.workers))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "log.csv"
    if log_path.exists():
        log_path.unlink()
    start = time.perf_counter()
    runner = train_standard_pinn if cfg.method == "standard" else train_bc_pinn
    run = runner(cfg.problem, schedule, train, cfg.seed, checkpoint_dir=out / "checkpoints",
                 log_path=log_path)
    wall = time.perf_counter() - start
    save_checkpoint(run.params, out / "final.bin")
    run.grid.save(out / "solution_grid.npz")
    files = {"checkpoint": "final.bin", "grid": "solution_grid.npz", "log": "log.csv",
             "segments": "checkpoints"}
    manifest = _manifest(cfg, run, sys.argv[1:] if args.argv is None else args.argv, wall, files)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"{cfg.method} run ({cfg.variant}) {run.status}: {run.segments_completed}/"
          f"{schedule.n_max} segments in {wall:.1f}s -> {out}")
    reference = args.reference or cfg.reference
    if reference and run.status == "ok":
        summary = _evaluate(out, reference, out / "eval", args.times, args.term_time)
        print(f"epsilon_total = {summary['epsilon_total']:.6g}")
    if run.status != "ok":
        print(f"error: {run.error}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _evaluate(run_dir: Path, reference, out_dir, times, term_time) -> dict:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise UserError(f"{run_dir} is not a run directory (no manifest.json)")
    manifest = json.loads(manifest_path.read_text())
    if not Path(reference).exists():
        raise UserError(f"reference file {reference} not found")
    ref = read_reference(reference)
    problem = problem_from_manifest(manifest["config"])
    params = load_checkpoint(run_dir / manifest["files"]["checkpoint"])
    extra = {"training_wall_clock": manifest["wall_clock"], "method": manifest["method"],
             "variant": manifest["variant"], "seed": manifest["seed"], "status": manifest["status"],
             "timings": manifest["timings"]}
    return write_evaluation(params, problem, ref, out_dir, times, term_time, extra)


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    out = Path(args.out) if args.out else run_dir / "eval"
    summary = _evaluate(run_dir, args.reference, out, args.times, args.term_time)
    print(f"epsilon_total = {summary['epsilon_total']:.6g} -> {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    overrides = {} if args.config else {"problem.kind": "CHPS"}
    overrides.update(dict(parse_override(s) for s in args.set or []))
    cfg = load_config(args.config, overrides)
    if args.reference:
        if not Path(args.reference).exists():
            raise UserError(f"reference file {args.reference} not found")
        ref = read_reference(args.reference)
    else:
        log.info("no reference given; solving the Cahn-Hilliard reference")
        ref = solve_reference(cfg.problem)
    labels = args.models.split(",") if args.models else list(SWEEP_MODELS)
    unknown = [lb for lb in labels if lb not in SWEEP_MODELS]
    if unknown:
        raise UserError(f"unknown sweep models {unknown}; choose from {''.join(SWEEP_MODELS)}")
    settings = SweepSettings(args.total_steps, args.collocation_scale, args.iteration_scale,
                             args.lbfgs_iters)
    rows, _, _ = run_sweep(cfg, ref, settings, args.out, _workers(args.workers, 1), labels)
    print(format_table(rows))
    return EXIT_NUMERICAL if any(r["status"] != "ok" for r in rows) else EXIT_OK


def _common(p, config_required=False):
    p.add_argument("--config", required=config_required, help="YAML run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field, e.g. schedule.adam_iters=500 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcpinn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("oracle", help="compute a spectral reference solution")
    _common(p)
    p.add_argument("--problem", default="AC", help="AC or CH (ignored when --config is given)")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also export the solution as CSV (x, t, h)")
    p.add_argument("--nx", type=int, default=512)
    p.add_argument("--dt", type=float, default=1e-5)
    p.add_argument("--snapshots", type=int, default=201)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--integrator", choices=("etdrk4", "rk4"), default="etdrk4")
    p.add_argument("--no-dealias", action="store_true")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("train", help="train a standard or bc-PINN")
    _common(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=("bc", "standard"))
    p.add_argument("--variant", choices=("plain", "log-residual"))
    p.add_argument("--problem", choices=("AC", "CHPS", "CH4"))
    p.add_argument("--workers", type=int)
    p.add_argument("--reference", help="evaluate against this reference after training")
    p.add_argument("--times", type=float, nargs="*", default=[0.25, 0.75])
    p.add_argument("--term-time", type=float, default=0.25)
    p.set_defaults(func=cmd_train, argv=None)

    p = sub.add_parser("eval", help="export predictions and errors of a trained run")
    p.add_argument("run", help="run directory written by train")
    p.add_argument("--reference", required=True)
    p.add_argument("--out", help="output directory (default RUN/eval)")
    p.add_argument("--times", type=float, nargs="*", default=[0.25, 0.75])
    p.add_argument("--term-time", type=float, default=0.25)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="segment-size / collocation / iteration sweep (models A-H)")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--reference", help="Cahn-Hilliard reference (computed if omitted)")
    p.add_argument("--models", help="comma-separated subset of A-H")
    p.add_argument("--total-steps", type=int, default=100)
    p.add_argument("--collocation-scale", type=float, default=0.1)
    p.add_argument("--iteration-scale", type=float, default=0.05)
    p.add_argument("--lbfgs-iters", type=int, default=100)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train":
        args.argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UserError, ConfigFileError, ConfigurationError, ReferenceFormatError,
            CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (NonFiniteLossError, BlowUpError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
