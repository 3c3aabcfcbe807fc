"""Standard PINN and backward-compatible (bc-PINN) training loops."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import eval_jet
from .loss import LossOptions, SegmentObjective
from .net import MlpParameters, forward, normalize, save_checkpoint, xavier_init
from .optim import AdamConfig, LbfgsConfig, OptimizerAborted, adam_run, lbfgs_run
from .pde import PdeProblem
from .sampling import SegmentSchedule, build_segment_sets, reference_x_grid

log = logging.getLogger(__name__)

LOG_FIELDS = ["segment", "phase", "iteration", "mse_i", "mse_b", "mse_r", "mse_s", "total"]


class SolutionGrid:
    """Network predictions stored on ``x`` x (a prefix of) the global snapshot times.

    ``values`` has shape (n_stored_times, nx, width); width 2 carries (h, mu).
    """

    def __init__(self, x, snapshot_times, width: int = 1):
        self.x = np.asarray(x, dtype=np.float64)
        self.snapshot_times = np.asarray(snapshot_times, dtype=np.float64)
        self.width = width
        self.indices = np.empty(0, dtype=int)
        self.values = np.empty((0, self.x.size, width))

    @property
    def times(self) -> np.ndarray:
        return self.snapshot_times[self.indices]

    @property
    def span(self) -> tuple[float, float] | None:
        if self.indices.size == 0:
            return None
        return float(self.times[0]), float(self.times[-1])

    def append(self, indices, values) -> None:
        indices = np.asarray(indices, dtype=int)
        values = np.asarray(values, dtype=np.float64).reshape(indices.size, self.x.size, self.width)
        if np.intersect1d(indices, self.indices).size:
            raise ValueError("snapshot times already stored")
        expected_next = 0 if self.indices.size == 0 else self.indices[-1] + 1
        if indices.size and (indices[0] != expected_next or np.any(np.diff(indices) != 1)):
            raise ValueError("stored snapshots must extend a contiguous prefix of the time grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite values cannot be stored")
        self.indices = np.concatenate([self.indices, indices])
        self.values = np.concatenate([self.values, values], axis=0)

    def lookup(self, points, field_index: int = 0) -> np.ndarray:
        """Stored values at grid points ``(x, t)``; raises KeyError for points off the grid."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if pts.shape[0] == 0:
            return np.empty(0)
        dx = self.x[1] - self.x[0]
        ix = np.rint((pts[:, 0] - self.x[0]) / dx).astype(int)
        dt = self.snapshot_times[1] - self.snapshot_times[0]
        it = np.rint((pts[:, 1] - self.snapshot_times[0]) / dt).astype(int)
        pos = np.searchsorted(self.indices, it)
        ok = ((ix >= 0) & (ix < self.x.size) & (pos < self.indices.size))
        ok[ok] &= self.indices[pos[ok]] == it[ok]
        ok[ok] &= np.abs(self.x[ix[ok]] - pts[ok, 0]) <= 1e-9 * max(1.0, abs(dx))
        ok[ok] &= np.abs(self.snapshot_times[it[ok]] - pts[ok, 1]) <= 1e-9
        if not np.all(ok):
            bad = pts[np.flatnonzero(~ok)[0]]
            raise KeyError(f"compat point {tuple(bad)} is not on the stored solution grid")
        return self.values[pos, ix, field_index]

    def save(self, path) -> None:
        np.savez(path, x=self.x, snapshot_times=self.snapshot_times, indices=self.indices,
                 values=self.values)

    @classmethod
    def load(cls, path) -> "SolutionGrid":
        with np.load(path) as z:
            g = cls(z["x"], z["snapshot_times"], z["values"].shape[2])
            g.indices = z["indices"].astype(int)
            g.values = z["values"]
        return g


def predict_grid(params: MlpParameters, x, t, box) -> np.ndarray:
    """Network outputs on the tensor grid, shape (nt, nx, width)."""
    tt, xx = np.meshgrid(t, x, indexing="ij")
    pts = np.column_stack([xx.ravel(), tt.ravel()])
    return forward(params, normalize(pts, box)).reshape(len(t), len(x), -1)


def snapshot_solution(params: MlpParameters, grid: SolutionGrid, indices, box) -> None:
    """Evaluate the network at the given snapshot indices and append them to ``grid``."""
    indices = np.asarray(indices, dtype=int)
    if np.intersect1d(indices, grid.indices).size:
        raise ValueError("overlapping snapshot times")
    grid.append(indices, predict_grid(params, grid.x, grid.snapshot_times[indices], box))


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple = (200, 200, 200, 200)
    adam: AdamConfig = AdamConfig()
    lbfgs: LbfgsConfig = LbfgsConfig(max_iter=2000)
    log_residual: bool = False
    reset_adam: bool = True
    compat_x_stride: int = 1
    compat_t_stride: int = 1
    chunk_size: int | None = 256
    workers: int = 1

    def layer_dims(self, problem: PdeProblem) -> list[int]:
        return [2, *self.hidden, problem.output_width]


@dataclass
class TrainedRun:
    params: MlpParameters
    grid: SolutionGrid
    schedule: SegmentSchedule
    seed: int
    terminations: list = field(default_factory=list)
    log: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    status: str = "ok"
    error: str | None = None

    @property
    def segments_completed(self) -> int:
        return len(self.terminations)


class _FlatObjective:
    def __init__(self, objective: SegmentObjective, dims):
        self.objective = objective
        self.dims = dims

    def __call__(self, theta):
        return self.objective(MlpParameters(self.dims, theta))


def _records(segment, result):
    return [{"segment": segment, **r.as_dict()} for r in result.log]


def _append_log(path, rows):
    if path is None or not rows:
        return
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerows(rows)


def train_bc_pinn(problem: PdeProblem, schedule: SegmentSchedule, config: TrainConfig = TrainConfig(),
                  seed: int = 0, checkpoint_dir=None, log_path=None,
                  x_grid: np.ndarray | None = None) -> TrainedRun:
    """Train one network segment by segment, pinning it to its stored earlier predictions.

    Segment 1 minimizes the plain PINN loss on (0, T_1]. Every later segment
    adds the compat term over the stored grid on [0, T_{n-1}] and continues
    from the current weights. After each segment the network is evaluated on
    that segment's snapshot times and the values are appended to the grid.
    """
    box = problem.box
    if x_grid is None:
        x_grid = reference_x_grid(schedule.n_initial, box.x_min, box.x_max)
    dims = config.layer_dims(problem)
    params = xavier_init(dims, seed)
    grid = SolutionGrid(x_grid, schedule.snapshot_times, problem.output_width)
    run = TrainedRun(params, grid, schedule, seed)
    opts = LossOptions(chunk_size=config.chunk_size, workers=config.workers)
    adam_cfg = replace(config.adam, n_iter=schedule.adam_iters)
    adam_state = None
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    for n in range(1, schedule.n_max + 1):
        sets = build_segment_sets(schedule, n, seed, problem, x_grid,
                                  config.compat_x_stride, config.compat_t_stride)
        stored = grid.lookup(sets.compat) if len(sets.compat) else None
        objective = SegmentObjective(problem, sets, stored, config.log_residual, opts)
        fun = _FlatObjective(objective, dims)
        theta = params.flat.copy()
        reasons = {}
        try:
            t0 = time.perf_counter()
            res = adam_run(fun, theta, adam_cfg, None if config.reset_adam else adam_state)
            adam_state = res.state
            theta = res.theta
            run.log.extend(_records(n, res))
            _append_log(log_path, _records(n, res))
            run.timings.append({"segment": n, "phase": "adam", "seconds": time.perf_counter() - t0,
                                "iterations": res.n_iter, "evaluations": res.n_fev})
            reasons["adam"] = res.reason.value
            if config.lbfgs.max_iter > 0:
                t0 = time.perf_counter()
                res = lbfgs_run(fun, theta, config.lbfgs)
                theta = res.theta
                run.log.extend(_records(n, res))
                _append_log(log_path, _records(n, res))
                run.timings.append({"segment": n, "phase": "lbfgs",
                                    "seconds": time.perf_counter() - t0,
                                    "iterations": res.n_iter, "evaluations": res.n_fev})
                reasons["lbfgs"] = res.reason.value
        except OptimizerAborted as exc:
            run.params = MlpParameters(dims, exc.last_good)
            run.status = "aborted"
            run.error = f"segment {n}: {exc}"
            log.error("run aborted in segment %d: %s", n, exc)
            return run
        params = MlpParameters(dims, theta)
        run.params = params
        snapshot_solution(params, grid, schedule.segment_snapshot_indices(n), box)
        run.terminations.append(reasons)
        last = run.log[-1] if run.log else {}
        log.info("segment %d/%d done: loss %.3e (%s)", n, schedule.n_max,
                 last.get("total", float("nan")), ", ".join(f"{k}={v}" for k, v in reasons.items()))
        if checkpoint_dir is not None:
            save_checkpoint(params, Path(checkpoint_dir) / f"segment_{n:02d}.bin")
            grid.save(Path(checkpoint_dir) / f"segment_{n:02d}.grid.npz")
    return run


def standard_budget(schedule: SegmentSchedule, config: TrainConfig,
                    n_collocation: int | None = None) -> tuple[SegmentSchedule, TrainConfig]:
    """Single-segment schedule and config matching the total iterations of a segmented run.

    Adam and L-BFGS iteration caps are summed over segments; boundary points
    are pooled. Collocation defaults to the per-segment count, so one loss
    evaluation costs about the same as in a segment.
    """
    single = SegmentSchedule(T=schedule.T, n_max=1, steps=schedule.total_steps,
                             n_initial=schedule.n_initial,
                             n_boundary=schedule.n_boundary * schedule.n_max,
                             n_collocation=n_collocation or schedule.n_collocation,
                             adam_iters=schedule.adam_iters * schedule.n_max)
    lb = config.lbfgs
    lbfgs = replace(lb, max_iter=lb.max_iter * schedule.n_max,
                    max_fun_evals=max(lb.max_fun_evals, lb.max_iter * schedule.n_max))
    return single, replace(config, lbfgs=lbfgs)


def train_standard_pinn(problem: PdeProblem, schedule: SegmentSchedule,
                        config: TrainConfig = TrainConfig(), seed: int = 0, **kwargs) -> TrainedRun:
    """Plain PINN over the whole time interval: a one-segment run without compat term.

    ``schedule`` must consist of a single segment (see :func:`standard_budget`).
    """
    if schedule.n_max != 1:
        raise ValueError("standard PINN expects a single-segment schedule")
    return train_bc_pinn(problem, schedule, config, seed, **kwargs)


def term_decomposition(params: MlpParameters, problem: PdeProblem, x, time: float) -> dict:
    """Individual PDE terms of the prediction at one time (columns keyed by name)."""
    pts = np.column_stack([x, np.full_like(x, time)])
    jet = eval_jet(params, pts, problem.box, 2, True)
    h = jet.value[:, 0]
    out = {"x": np.asarray(x), "h": h, "h_t": jet.dt[:, 0], "h_xx": jet.d(2)[:, 0]}
    p = problem.params
    if problem.kind.value == "AC":
        out["diffusion"] = p.c1_sq * jet.d(2)[:, 0]
        out["reaction"] = p.c2 * (h ** 3 - h)
    else:
        out["f"] = h ** 3 - h
        if problem.output_width == 2:
            out["mu"] = jet.value[:, 1]
            out["mu_xx"] = jet.d(2)[:, 1]
    return out
