"""Segment schedules and the point sets used by each training segment."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .net import ConfigurationError
from .pde import PdeProblem


def reference_x_grid(n: int = 512, x_min: float = -1.0, x_max: float = 1.0) -> np.ndarray:
    """Uniform periodic grid, right endpoint excluded (matches the spectral oracle)."""
    return x_min + (x_max - x_min) * np.arange(n) / n


def latin_hypercube(n: int, bounds: Sequence[tuple[float, float]], seed) -> np.ndarray:
    """``n`` stratified samples in the box ``prod (lo, hi]``, one per stratum per axis."""
    if n < 1:
        raise ConfigurationError("latin_hypercube needs n >= 1")
    rng = np.random.default_rng(seed)
    out = np.empty((n, len(bounds)))
    for d, (lo, hi) in enumerate(bounds):
        if not lo < hi:
            raise ConfigurationError(f"invalid bounds {(lo, hi)}")
        u = (rng.permutation(n) + rng.random(n)) / n
        out[:, d] = hi - u * (hi - lo)
    return out


@dataclass(frozen=True)
class SegmentSchedule:
    """Uniform partition of [0, T] into ``n_max`` segments.

    Every segment spans ``steps`` snapshot intervals of the global snapshot grid.
    """

    T: float = 1.0
    n_max: int = 5
    steps: int = 40
    n_initial: int = 512
    n_boundary: int = 40
    n_collocation: int = 20000
    adam_iters: int = 10000

    def __post_init__(self):
        for name in ("n_max", "steps", "n_initial", "n_boundary", "n_collocation"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"schedule.{name} must be >= 1")
        if self.T <= 0 or self.adam_iters < 0:
            raise ConfigurationError("schedule needs T > 0 and adam_iters >= 0")

    @property
    def total_steps(self) -> int:
        return self.n_max * self.steps

    @property
    def snapshot_dt(self) -> float:
        return self.T / self.total_steps

    @property
    def boundaries(self) -> np.ndarray:
        return self.T * np.arange(self.n_max + 1) / self.n_max

    @property
    def snapshot_times(self) -> np.ndarray:
        return self.T * np.arange(self.total_steps + 1) / self.total_steps

    def segment_snapshot_indices(self, n: int) -> np.ndarray:
        """Snapshot indices newly covered by segment ``n`` (segment 1 includes t=0)."""
        self._check(n)
        lo = 0 if n == 1 else (n - 1) * self.steps + 1
        return np.arange(lo, n * self.steps + 1)

    def _check(self, n):
        if not 1 <= n <= self.n_max:
            raise IndexError(f"segment {n} outside 1..{self.n_max}")


def allen_cahn_schedule(**overrides) -> SegmentSchedule:
    base = dict(T=1.0, n_max=5, steps=40, n_initial=512, n_boundary=40, n_collocation=20000,
                adam_iters=10000)
    base.update(overrides)
    return SegmentSchedule(**base)


def cahn_hilliard_schedule(**overrides) -> SegmentSchedule:
    base = dict(T=1.0, n_max=20, steps=10, n_initial=512, n_boundary=10, n_collocation=5000,
                adam_iters=10000)
    base.update(overrides)
    return SegmentSchedule(**base)


@dataclass
class PointSets:
    """Training points of one segment; boundary rows are at x_max, mirrored at loss time."""

    initial: np.ndarray
    initial_targets: np.ndarray
    boundary: np.ndarray
    collocation: np.ndarray
    compat: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "t", "set"])
            for tag, pts in (("initial", self.initial), ("boundary", self.boundary),
                             ("collocation", self.collocation), ("compat", self.compat)):
                for x, t in pts:
                    w.writerow([repr(float(x)), repr(float(t)), tag])


def compat_points(schedule: SegmentSchedule, n: int, x_grid: np.ndarray,
                  x_stride: int = 1, t_stride: int = 1) -> np.ndarray:
    """Stored-grid points covering [0, T_{n-1}], ordered time-major."""
    schedule._check(n)
    if n == 1:
        return np.empty((0, 2))
    t_idx = np.arange(0, (n - 1) * schedule.steps + 1)[::t_stride]
    if t_idx[-1] != (n - 1) * schedule.steps:
        t_idx = np.append(t_idx, (n - 1) * schedule.steps)
    t = schedule.snapshot_times[t_idx]
    xs = x_grid[::x_stride]
    tt, xx = np.meshgrid(t, xs, indexing="ij")
    return np.column_stack([xx.ravel(), tt.ravel()])


def build_segment_sets(schedule: SegmentSchedule, n: int, seed: int, problem: PdeProblem,
                       x_grid: np.ndarray | None = None, compat_x_stride: int = 1,
                       compat_t_stride: int = 1) -> PointSets:
    schedule._check(n)
    box = problem.box
    if x_grid is None:
        x_grid = reference_x_grid(schedule.n_initial, box.x_min, box.x_max)
    t_lo, t_hi = schedule.boundaries[n - 1], schedule.boundaries[n]
    ss = np.random.SeedSequence([int(seed) & 0xFFFF_FFFF_FFFF_FFFF, n])
    s_bnd, s_col = ss.spawn(2)
    initial = np.column_stack([x_grid, np.zeros_like(x_grid)])
    tb = latin_hypercube(schedule.n_boundary, [(t_lo, t_hi)], s_bnd)[:, 0]
    boundary = np.column_stack([np.full_like(tb, box.x_max), tb])
    collocation = latin_hypercube(schedule.n_collocation, [(box.x_min, box.x_max), (t_lo, t_hi)], s_col)
    return PointSets(initial=initial, initial_targets=problem.initial(x_grid), boundary=boundary,
                     collocation=collocation,
                     compat=compat_points(schedule, n, x_grid, compat_x_stride, compat_t_stride))
