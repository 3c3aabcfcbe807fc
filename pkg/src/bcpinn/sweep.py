"""Segment-size / collocation / iteration sweep on the phase-space Cahn-Hilliard problem."""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .metrics import snapshot_errors, relative_total_error
from .net import ConfigurationError, DomainBox
from .oracle import ReferenceSolution
from .pde import PdeProblem, ProblemKind
from .sampling import SegmentSchedule
from .trainer import predict_grid, train_bc_pinn

log = logging.getLogger(__name__)

# label -> (snapshot steps per segment, collocation points per segment, Adam iterations per segment)
SWEEP_MODELS = {
    "A": (10, 5000, 10000),
    "B": (10, 5000, 20000),
    "C": (10, 10000, 10000),
    "D": (10, 10000, 20000),
    "E": (25, 5000, 10000),
    "F": (25, 5000, 20000),
    "G": (25, 10000, 10000),
    "H": (25, 10000, 20000),
}

ROW_FIELDS = ["model", "steps_per_segment", "segments", "n_collocation", "adam_iters",
              "lbfgs_iters", "nominal_n_collocation", "nominal_adam_iters", "epsilon",
              "wall_clock", "status"]


@dataclass(frozen=True)
class SweepSettings:
    total_steps: int = 100
    collocation_scale: float = 0.1
    iteration_scale: float = 0.05
    lbfgs_iters: int = 100

    def __post_init__(self):
        if self.total_steps < 1 or self.collocation_scale <= 0 or self.iteration_scale < 0:
            raise ConfigurationError(f"invalid sweep settings {self}")
        if self.lbfgs_iters < 0:
            raise ConfigurationError("lbfgs_iters must be >= 0")


def model_config(base: RunConfig, label: str, settings: SweepSettings) -> RunConfig:
    """Config for one sweep model over the first ``total_steps`` snapshot intervals."""
    steps, n_r, n_iter = SWEEP_MODELS[label]
    if settings.total_steps % steps:
        raise ConfigurationError(f"model {label}: {steps} steps/segment do not divide "
                                 f"{settings.total_steps} steps")
    if base.problem.kind is ProblemKind.AC:
        raise ConfigurationError("the sweep runs on a Cahn-Hilliard problem")
    dt = base.schedule.snapshot_dt
    T = settings.total_steps * dt
    schedule = replace(base.schedule, T=T, n_max=settings.total_steps // steps, steps=steps,
                       n_collocation=max(1, round(n_r * settings.collocation_scale)),
                       adam_iters=round(n_iter * settings.iteration_scale))
    problem = PdeProblem(base.problem.kind, base.problem.params, base.problem.boundary_order,
                         DomainBox(base.problem.box.x_min, base.problem.box.x_max, 0.0, T))
    train = replace(base.train, adam=replace(base.train.adam, n_iter=schedule.adam_iters),
                    lbfgs=replace(base.train.lbfgs, max_iter=settings.lbfgs_iters))
    return replace(base, problem=problem, schedule=schedule, train=train, method="bc")


def _run_model(label: str, cfg: RunConfig, ref_x, ref_t, ref_h) -> tuple[dict, np.ndarray]:
    sched: SegmentSchedule = cfg.schedule
    start = time.perf_counter()
    run = train_bc_pinn(cfg.problem, sched, cfg.train, cfg.seed, x_grid=ref_x)
    wall = time.perf_counter() - start
    pred = predict_grid(run.params, ref_x, ref_t, cfg.problem.box)[..., 0]
    _, rel = snapshot_errors(pred, ref_h)
    steps, n_r, n_iter = SWEEP_MODELS[label]
    row = {"model": label, "steps_per_segment": steps, "segments": sched.n_max,
           "n_collocation": sched.n_collocation, "adam_iters": sched.adam_iters,
           "lbfgs_iters": cfg.train.lbfgs.max_iter, "nominal_n_collocation": n_r,
           "nominal_adam_iters": n_iter, "epsilon": relative_total_error(pred, ref_h),
           "wall_clock": wall, "status": run.status}
    log.info("sweep model %s: epsilon %.4g in %.1fs", label, row["epsilon"], wall)
    return row, rel


def run_sweep(base: RunConfig, reference: ReferenceSolution, settings: SweepSettings = SweepSettings(),
              out_dir=None, workers: int = 1, labels=None) -> tuple[list[dict], np.ndarray, np.ndarray]:
    """Train every model and return (rows, times, per-snapshot relative errors [model, time]).

    With ``out_dir`` the rows go to ``sweep.csv`` and the error-vs-time table
    (one column per model) to ``sweep_errors.csv``.
    """
    labels = list(SWEEP_MODELS) if labels is None else list(labels)
    configs = [model_config(base, lb, settings) for lb in labels]
    n_t = settings.total_steps + 1
    if reference.t.size < n_t:
        raise ConfigurationError("reference has fewer snapshots than the sweep horizon")
    T = configs[0].schedule.T
    ref_t, ref_h = reference.t[:n_t], reference.h[:n_t]
    if abs(ref_t[-1] - T) > 1e-9:
        raise ConfigurationError(f"reference snapshot spacing does not match the sweep (t={ref_t[-1]} vs {T})")
    args = [(lb, cfg, reference.x, ref_t, ref_h) for lb, cfg in zip(labels, configs)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_model, *zip(*args)))
    else:
        results = [_run_model(*a) for a in args]
    rows = [r for r, _ in results]
    errors = np.array([e for _, e in results])
    if out_dir is not None:
        write_sweep(out_dir, rows, ref_t, errors)
    return rows, ref_t, errors


def write_sweep(out_dir, rows, times, errors) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
        w.writeheader()
        w.writerows(rows)
    with open(out / "sweep_errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *(r["model"] for r in rows)])
        for j, t in enumerate(times):
            w.writerow([repr(float(t)), *(repr(float(e)) for e in errors[:, j])])


def format_table(rows) -> str:
    head = f"{'model':<6}{'steps/seg':>10}{'N_r':>8}{'N_iter':>8}{'epsilon':>12}{'wall[s]':>10}"
    lines = [head]
    for r in rows:
        lines.append(f"{r['model']:<6}{r['steps_per_segment']:>10}{r['n_collocation']:>8}"
                     f"{r['adam_iters']:>8}{r['epsilon']:>12.4g}{r['wall_clock']:>10.1f}")
    return "\n".join(lines)
