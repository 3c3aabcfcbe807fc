"""Mean-squared-error components of the (bc-)PINN objective and their gradients."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import NonFiniteLossError, accumulate
from .net import MlpParameters
from .pde import PdeProblem
from .sampling import PointSets


@dataclass(frozen=True)
class LossBreakdown:
    mse_i: float = 0.0
    mse_b: float = 0.0
    mse_r: float = 0.0
    mse_s: float = 0.0

    @property
    def total(self) -> float:
        return self.mse_i + self.mse_b + self.mse_r + self.mse_s

    def as_dict(self) -> dict:
        return {**asdict(self), "total": self.total}


@dataclass(frozen=True)
class LossOptions:
    chunk_size: int | None = 256
    workers: int = 1


def _empty(name, pts):
    if len(pts) == 0:
        raise ValueError(f"{name}: empty point set")


def _ret(value, grad, with_grad):
    return (value, grad) if with_grad else value


def mse_initial(params: MlpParameters, points, targets, problem: PdeProblem,
                with_grad: bool = False, opts: LossOptions = LossOptions()):
    """Mean over points of the squared misfit, summed over output fields."""
    _empty("mse_initial", points)
    targets = np.asarray(targets, dtype=np.float64).reshape(len(points), -1)

    def head(jet, sl):
        diff = jet.value - targets[sl]
        cot = jet.zeros_like()
        cot[0] = 2.0 * diff
        return float(np.sum(diff * diff)), cot

    v, g = accumulate(params, points, problem.box, 0, False, head, with_grad,
                      opts.chunk_size, opts.workers)
    n = len(points)
    return _ret(v / n, None if g is None else g / n, with_grad)


def mse_boundary(params: MlpParameters, points, problem: PdeProblem, n_d: int | None = None,
                 with_grad: bool = False, opts: LossOptions = LossOptions()):
    """Periodicity misfit between (x_b, t) and (-x_b, t) for derivative orders 0..n_d-1.

    Points are given at one end of the domain; the mirror rows are generated here.
    """
    _empty("mse_boundary", points)
    n_d = problem.boundary_order if n_d is None else n_d
    pts = np.asarray(points, dtype=np.float64)
    mirror = pts.copy()
    mirror[:, 0] = -mirror[:, 0]
    nb = len(pts)
    both = np.vstack([pts, mirror])

    def head(jet, sl):
        cot = jet.zeros_like()
        total = 0.0
        for d in range(n_d):
            diff = jet.data[d, :nb] - jet.data[d, nb:]
            total += float(np.sum(diff * diff))
            cot[d, :nb] = 2.0 * diff
            cot[d, nb:] = -2.0 * diff
        return total, cot

    # one chunk: the head pairs rows with their mirrors
    v, g = accumulate(params, both, problem.box, n_d - 1, False, head, with_grad, None, 1)
    return _ret(v / nb, None if g is None else g / nb, with_grad)


def mse_residual(params: MlpParameters, points, problem: PdeProblem, log_variant: bool = False,
                 with_grad: bool = False, opts: LossOptions = LossOptions()):
    """Mean squared PDE residual (summed over residual equations).

    With ``log_variant`` each squared residual r^2 becomes ln(1 + r^2).
    """
    _empty("mse_residual", points)
    pts = np.asarray(points, dtype=np.float64)

    def head(jet, sl):
        rs = problem.residuals(jet)
        partials = problem.residual_partials(jet)
        cot = jet.zeros_like()
        total = 0.0
        for r, dr in zip(rs, partials):
            if not np.all(np.isfinite(r)):
                i = int(np.flatnonzero(~np.isfinite(r))[0])
                raise NonFiniteLossError("non-finite residual", component="mse_r",
                                         point=tuple(pts[sl][i]))
            r2 = r * r
            if log_variant:
                total += float(np.sum(np.log1p(r2)))
                w = 2.0 * r / (1.0 + r2)
            else:
                total += float(np.sum(r2))
                w = 2.0 * r
            cot += w[None, :, None] * dr
        return total, cot

    v, g = accumulate(params, pts, problem.box, problem.residual_order, True, head, with_grad,
                      opts.chunk_size, opts.workers)
    n = len(pts)
    return _ret(v / n, None if g is None else g / n, with_grad)


def mse_compat(params: MlpParameters, points, stored, problem: PdeProblem,
               with_grad: bool = False, opts: LossOptions = LossOptions()):
    """Mean squared departure of h from previously stored predictions (0 if no points)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return _ret(0.0, np.zeros(params.size) if with_grad else None, with_grad)
    stored = np.asarray(stored, dtype=np.float64).ravel()
    if stored.shape[0] != len(pts):
        raise ValueError("mse_compat: stored values do not match compat points")

    def head(jet, sl):
        diff = jet.value[:, 0] - stored[sl]
        cot = jet.zeros_like()
        cot[0, :, 0] = 2.0 * diff
        return float(np.sum(diff * diff)), cot

    v, g = accumulate(params, pts, problem.box, 0, False, head, with_grad,
                      opts.chunk_size, opts.workers)
    n = len(pts)
    return _ret(v / n, None if g is None else g / n, with_grad)


def total_loss(params: MlpParameters, sets: PointSets, problem: PdeProblem,
               compat_values=None, log_residual: bool = False, with_grad: bool = False,
               opts: LossOptions = LossOptions()):
    """All four components; the compat term vanishes when ``sets.compat`` is empty."""
    def run(fn, *args):
        out = fn(*args, with_grad=with_grad, opts=opts)
        return out if with_grad else (out, None)

    parts = [
        run(mse_initial, params, sets.initial, sets.initial_targets, problem),
        run(mse_boundary, params, sets.boundary, problem),
        run(mse_residual, params, sets.collocation, problem, log_residual),
    ]
    if len(sets.compat):
        if compat_values is None:
            raise ValueError("compat points given without stored values")
        parts.append(run(mse_compat, params, sets.compat, compat_values, problem))
    else:
        parts.append((0.0, None))
    breakdown = LossBreakdown(*(float(v) for v, _ in parts))
    if not with_grad:
        return breakdown
    grad = np.zeros(params.size)
    for _, g in parts:
        if g is not None:
            grad += g
    return breakdown, grad


class SegmentObjective:
    """Loss evaluator for one segment: ``objective(params) -> (LossBreakdown, grad)``."""

    def __init__(self, problem: PdeProblem, sets: PointSets, compat_values=None,
                 log_residual: bool = False, opts: LossOptions = LossOptions()):
        self.problem = problem
        self.sets = sets
        self.compat_values = compat_values
        self.log_residual = log_residual
        self.opts = opts
        self.n_evals = 0

    def __call__(self, params: MlpParameters):
        self.n_evals += 1
        return total_loss(params, self.sets, self.problem, self.compat_values,
                          self.log_residual, True, self.opts)
