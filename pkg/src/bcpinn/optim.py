"""Adam and L-BFGS on flat parameter vectors.

Objectives are callables ``fun(theta) -> (loss, grad)`` where ``loss`` is a
float or a ``LossBreakdown``-like object exposing ``total``.
"""

from __future__ import annotations

import enum
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteLossError
from .net import ConfigurationError


class Termination(str, enum.Enum):
    MAX_ITER = "max-iterations"
    MAX_FUN_EVALS = "max-function-evaluations"
    LINE_SEARCH = "line-search-failure"      # line-search trial cap exhausted
    FTOL = "relative-reduction"
    GTOL = "gradient-norm"                    # optional extension, off by default
    ADAM_DONE = "adam-iterations"


class OptimizerAborted(NonFiniteLossError):
    """Non-finite loss or gradient; ``last_good`` holds the last finite iterate."""

    def __init__(self, message, last_good, component=None):
        super().__init__(message, component=component)
        self.last_good = last_good


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    n_iter: int = 10000
    log_stride: int = 1

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.lr > 0 and self.epsilon > 0):
            raise ConfigurationError(f"invalid Adam configuration {self}")
        if self.n_iter < 0 or self.log_stride < 1:
            raise ConfigurationError("Adam n_iter must be >= 0 and log_stride >= 1")


@dataclass(frozen=True)
class LbfgsConfig:
    max_iter: int = 50000
    max_fun_evals: int = 50000
    max_line_search: int = 50
    history: int = 50
    ftol: float = 2.220446049250313e-16
    gtol: float | None = None
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    log_stride: int = 1

    def __post_init__(self):
        if self.max_iter < 0 or min(self.max_fun_evals, self.max_line_search, self.history) < 1:
            raise ConfigurationError(f"L-BFGS limits must be positive: {self}")
        if self.ftol < 0 or not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ConfigurationError(f"invalid L-BFGS tolerances: {self}")


@dataclass
class IterationRecord:
    iteration: int
    phase: str
    loss: object

    @property
    def total(self) -> float:
        return _total(self.loss)

    def as_dict(self) -> dict:
        d = {"iteration": self.iteration, "phase": self.phase}
        if hasattr(self.loss, "as_dict"):
            d.update(self.loss.as_dict())
        else:
            d["total"] = float(self.loss)
        return d


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class OptimResult:
    theta: np.ndarray
    loss: object
    reason: Termination
    n_iter: int
    n_fev: int
    log: list = field(default_factory=list)
    wall_clock: float = 0.0
    state: AdamState | None = None


def _total(loss) -> float:
    return float(getattr(loss, "total", loss))


def _checked(fun, theta, last_good):
    try:
        loss, grad = fun(theta)
    except OptimizerAborted:
        raise
    except NonFiniteLossError as exc:
        raise OptimizerAborted(str(exc), last_good, exc.component) from exc
    if not math.isfinite(_total(loss)):
        bad = None
        if hasattr(loss, "as_dict"):
            bad = next((k for k, v in loss.as_dict().items() if not math.isfinite(v)), None)
        raise OptimizerAborted(f"non-finite loss (component {bad})", last_good, bad)
    if not np.all(np.isfinite(grad)):
        raise OptimizerAborted("non-finite gradient", last_good, "gradient")
    return loss, grad


def adam_run(fun, theta0, config: AdamConfig = AdamConfig(), state: AdamState | None = None,
             phase: str = "adam") -> OptimResult:
    """``config.n_iter`` bias-corrected Adam steps from ``theta0``.

    Passing a previous ``state`` continues its moment estimates; by default a
    fresh optimizer is used.
    """
    start = time.perf_counter()
    theta = np.array(theta0, dtype=np.float64, copy=True)
    if state is None:
        state = AdamState(np.zeros_like(theta), np.zeros_like(theta))
    b1, b2 = config.beta1, config.beta2
    log = []
    loss = None
    for it in range(config.n_iter):
        loss, g = _checked(fun, theta, theta.copy())
        if it % config.log_stride == 0:
            log.append(IterationRecord(it, phase, loss))
        state.t += 1
        state.m *= b1
        state.m += (1.0 - b1) * g
        state.v *= b2
        state.v += (1.0 - b2) * g * g
        m_hat = state.m / (1.0 - b1 ** state.t)
        v_hat = state.v / (1.0 - b2 ** state.t)
        theta -= config.lr * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return OptimResult(theta, loss, Termination.ADAM_DONE, config.n_iter, config.n_iter, log,
                       time.perf_counter() - start, state)


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimizer of the cubic interpolating two (value, slope) pairs, clipped to [lo, hi]."""
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    d2_sq = d1 * d1 - g1 * g2
    if d2_sq >= 0.0:
        d2 = math.sqrt(d2_sq)
        if x1 <= x2:
            xm = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        else:
            xm = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        if math.isfinite(xm):
            return min(max(xm, lo), hi)
    return 0.5 * (lo + hi)


class _LineSearch:
    """Strong-Wolfe search along ``d`` (bracketing phase + cubic zoom)."""

    def __init__(self, fun, x, f0, g0, d, c1, c2, max_evals):
        self.fun, self.x, self.d = fun, x, d
        self.f0, self.dphi0 = f0, float(g0 @ d)
        self.c1, self.c2 = c1, c2
        self.max_evals = max_evals
        self.n_evals = 0
        self.best = None  # (f, alpha, x, loss, g)

    def phi(self, alpha):
        self.n_evals += 1
        x = self.x + alpha * self.d
        loss, g = _checked(self.fun, x, self.x)
        f = _total(loss)
        if self.best is None or f < self.best[0]:
            self.best = (f, alpha, x, loss, g)
        return f, float(g @ self.d), (x, loss, g)

    def armijo(self, alpha, f):
        return f <= self.f0 + self.c1 * alpha * self.dphi0

    def curvature(self, dphi):
        return abs(dphi) <= -self.c2 * self.dphi0

    def search(self, alpha):
        a_prev, f_prev, d_prev = 0.0, self.f0, self.dphi0
        while self.n_evals < self.max_evals:
            f, dphi, pt = self.phi(alpha)
            if not self.armijo(alpha, f) or (self.n_evals > 1 and f >= f_prev):
                return self.zoom(a_prev, f_prev, d_prev, alpha, f, dphi)
            if self.curvature(dphi):
                return pt
            if dphi >= 0.0:
                return self.zoom(alpha, f, dphi, a_prev, f_prev, d_prev)
            nxt = _cubic_min(a_prev, f_prev, d_prev, alpha, f, dphi,
                             alpha + 0.01 * (alpha - a_prev), 10.0 * alpha)
            a_prev, f_prev, d_prev = alpha, f, dphi
            alpha = nxt
        return None

    def zoom(self, a_lo, f_lo, d_lo, a_hi, f_hi, d_hi):
        while self.n_evals < self.max_evals:
            lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
            if hi - lo <= 1e-16 * max(hi, 1.0):
                return None
            a = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi, lo, hi)
            if min(a - lo, hi - a) < 0.1 * (hi - lo):
                a = 0.5 * (lo + hi)
            f, dphi, pt = self.phi(a)
            if not self.armijo(a, f) or f >= f_lo:
                a_hi, f_hi, d_hi = a, f, dphi
            else:
                if self.curvature(dphi):
                    return pt
                if dphi * (a_hi - a_lo) >= 0.0:
                    a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
                a_lo, f_lo, d_lo = a, f, dphi
        return None


def _two_loop(g, s_hist, y_hist, rho_hist):
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def lbfgs_run(fun, theta0, config: LbfgsConfig = LbfgsConfig(), phase: str = "lbfgs") -> OptimResult:
    """Limited-memory BFGS until one of the configured stopping criteria fires."""
    start = time.perf_counter()
    x = np.array(theta0, dtype=np.float64, copy=True)
    loss, g = _checked(fun, x, x.copy())
    f = _total(loss)
    n_fev = 1
    s_hist: deque = deque(maxlen=config.history)
    y_hist: deque = deque(maxlen=config.history)
    rho_hist: deque = deque(maxlen=config.history)
    log = [IterationRecord(0, phase, loss)]
    k = 0
    reason = None
    while reason is None:
        if k >= config.max_iter:
            reason = Termination.MAX_ITER
            break
        if n_fev >= config.max_fun_evals:
            reason = Termination.MAX_FUN_EVALS
            break
        if config.gtol is not None and np.max(np.abs(g)) <= config.gtol:
            reason = Termination.GTOL
            break
        d = _two_loop(g, s_hist, y_hist, rho_hist)
        gd = float(g @ d)
        if not gd < 0.0:
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            d = -g
            gd = -float(g @ g)
        if gd == 0.0:
            # stationary point: a zero step leaves f unchanged
            k += 1
            reason = Termination.FTOL
            break
        alpha0 = 1.0 if (k > 0 or s_hist) else min(1.0, 1.0 / float(np.sum(np.abs(g))))
        budget = min(config.max_line_search, config.max_fun_evals - n_fev)
        ls = _LineSearch(fun, x, f, g, d, config.wolfe_c1, config.wolfe_c2, budget)
        found = ls.search(alpha0)
        n_fev += ls.n_evals
        if found is None:
            if ls.best is not None and ls.best[0] < f:
                f, _, x, loss, g = ls.best
                k += 1
                log.append(IterationRecord(k, phase, loss))
            reason = (Termination.MAX_FUN_EVALS if n_fev >= config.max_fun_evals
                      and ls.n_evals < config.max_line_search else Termination.LINE_SEARCH)
            break
        x_new, loss_new, g_new = found
        f_new = _total(loss_new)
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(y @ y):
            s_hist.append(s), y_hist.append(y), rho_hist.append(1.0 / sy)
        k += 1
        rel = (f - f_new) / max(abs(f), abs(f_new), 1.0)
        x, f, g, loss = x_new, f_new, g_new, loss_new
        if k % config.log_stride == 0:
            log.append(IterationRecord(k, phase, loss))
        if rel <= config.ftol:
            reason = Termination.FTOL
    return OptimResult(x, loss, reason, k, n_fev, log, time.perf_counter() - start)
