import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize, rosen, rosen_der

from bcpinn.loss import LossBreakdown
from bcpinn.net import ConfigurationError
from bcpinn.optim import (AdamConfig, AdamState, LbfgsConfig, OptimizerAborted, Termination,
                          adam_run, lbfgs_run)

VALID_REASONS = {"max-iterations", "max-function-evaluations", "line-search-failure",
                 "relative-reduction", "gradient-norm"}


def quadratic(center=0.0):
    return lambda th: (0.5 * float(np.sum((th - center) ** 2)), th - center)


def rosenbrock(th):
    return float(rosen(th)), rosen_der(th)


def test_adam_single_step_hand_example():
    res = adam_run(lambda th: (float(th[0]), np.ones(1)), np.zeros(1), AdamConfig(n_iter=1))
    assert res.theta[0] == pytest.approx(-0.001, abs=1e-9)
    assert res.reason is Termination.ADAM_DONE


def test_adam_zero_gradient_is_fixed_point():
    theta0 = np.array([0.3, -2.0, 5.0])
    res = adam_run(lambda th: (1.0, np.zeros(3)), theta0, AdamConfig(n_iter=50))
    np.testing.assert_array_equal(res.theta, theta0)


def test_adam_quadratic_converges():
    res = adam_run(quadratic(), np.ones(1), AdamConfig(n_iter=5000))
    # scalar simulation oracle written independently of the implementation
    th, m, v = 1.0, 0.0, 0.0
    for t in range(1, 5001):
        g = th
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        th -= 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert abs(res.theta[0]) < 1e-3
    assert res.theta[0] == pytest.approx(th, abs=1e-12)


def test_adam_logs_and_state_continuation():
    cfg = AdamConfig(n_iter=10, log_stride=3)
    res = adam_run(quadratic(), np.ones(2), cfg)
    assert [r.iteration for r in res.log] == [0, 3, 6, 9]
    assert all(r.phase == "adam" for r in res.log)
    assert res.state.t == 10
    both = adam_run(quadratic(), np.ones(2), AdamConfig(n_iter=20))
    split = adam_run(quadratic(), res.theta, cfg, state=res.state)
    np.testing.assert_array_equal(split.theta, both.theta)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1e3, 1e3), st.integers(0, 10_000))
def test_adam_translation_equivariant(shift, seed):
    theta0 = np.random.default_rng(seed).normal(size=4)
    base = adam_run(rosenbrock, theta0, AdamConfig(n_iter=30))
    moved = adam_run(lambda th: (rosenbrock(th)[0] + shift, rosenbrock(th)[1]), theta0,
                     AdamConfig(n_iter=30))
    np.testing.assert_array_equal(base.theta, moved.theta)


def test_adam_abort_keeps_last_good():
    calls = []

    def fun(th):
        calls.append(th.copy())
        if len(calls) == 4:
            return LossBreakdown(1.0, float("nan"), 0.0, 0.0), np.zeros(1)
        return float(th[0] ** 2), 2 * th

    with pytest.raises(OptimizerAborted) as info:
        adam_run(fun, np.ones(1), AdamConfig(n_iter=10))
    assert info.value.component == "mse_b"
    np.testing.assert_array_equal(info.value.last_good, calls[3])


def test_config_validation():
    with pytest.raises(ConfigurationError):
        AdamConfig(beta1=1.0)
    with pytest.raises(ConfigurationError):
        AdamConfig(lr=0.0)
    with pytest.raises(ConfigurationError):
        LbfgsConfig(history=0)
    with pytest.raises(ConfigurationError):
        LbfgsConfig(wolfe_c1=0.95, wolfe_c2=0.9)
    assert LbfgsConfig().ftol == pytest.approx(2.22044604925e-16, rel=1e-11)
    assert LbfgsConfig().history == 50 and LbfgsConfig().max_line_search == 50


def test_lbfgs_rosenbrock():
    x0 = np.array([-1.2, 1.0])
    res = lbfgs_run(rosenbrock, x0)
    assert np.max(np.abs(res.theta - 1.0)) < 1e-6
    assert res.n_iter < 200
    assert res.reason.value in VALID_REASONS
    ref = minimize(rosen, x0, jac=rosen_der, method="L-BFGS-B", options={"gtol": 1e-12, "ftol": 1e-16})
    np.testing.assert_allclose(res.theta, ref.x, atol=1e-6)


def test_lbfgs_quadratic_exact():
    res = lbfgs_run(quadratic(3.0), np.zeros(1))
    assert abs(res.theta[0] - 3.0) < 1e-10
    assert res.n_iter <= 3


def test_lbfgs_constant_loss_stops_by_relative_reduction():
    res = lbfgs_run(lambda th: (2.5, np.zeros_like(th)), np.ones(3))
    assert res.reason is Termination.FTOL and res.n_iter == 1


def test_lbfgs_zero_iteration_budget():
    res = lbfgs_run(quadratic(), np.ones(2), LbfgsConfig(max_iter=0))
    assert res.reason is Termination.MAX_ITER and res.n_iter == 0 and res.n_fev == 1
    np.testing.assert_array_equal(res.theta, np.ones(2))


def test_lbfgs_iteration_and_evaluation_caps():
    res = lbfgs_run(rosenbrock, np.array([-1.2, 1.0]), LbfgsConfig(max_iter=5))
    assert res.reason is Termination.MAX_ITER and res.n_iter == 5
    res = lbfgs_run(rosenbrock, np.array([-1.2, 1.0]), LbfgsConfig(max_fun_evals=7))
    assert res.reason is Termination.MAX_FUN_EVALS and res.n_fev <= 7


def test_lbfgs_line_search_failure_returns_best():
    # gradient points the wrong way, so no step satisfies sufficient decrease
    def lying(th):
        return float(th @ th), -th

    x0 = np.array([1.0, 2.0])
    res = lbfgs_run(lying, x0, LbfgsConfig(max_line_search=8))
    assert res.reason is Termination.LINE_SEARCH
    assert lying(res.theta)[0] <= lying(x0)[0]


def test_lbfgs_gradient_norm_extension():
    res = lbfgs_run(quadratic(), np.zeros(2), LbfgsConfig(gtol=1e-12))
    assert res.reason is Termination.GTOL and res.n_iter == 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_lbfgs_monotone_and_valid_reason(seed, dim):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-2, 2, dim)
    res = lbfgs_run(rosenbrock, x0, LbfgsConfig(max_iter=60))
    totals = [r.total for r in res.log]
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    assert res.reason.value in VALID_REASONS
    again = lbfgs_run(rosenbrock, x0, LbfgsConfig(max_iter=60))
    assert again.theta.tobytes() == res.theta.tobytes()


def test_lbfgs_abort_on_nonfinite():
    def fun(th):
        if th[0] < 0.5:
            return float("inf"), np.zeros_like(th)
        return float(th @ th), 2 * th

    with pytest.raises(OptimizerAborted):
        lbfgs_run(fun, np.array([0.0, 1.0]))


def test_adam_state_default_is_fresh():
    res = adam_run(quadratic(), np.ones(1), AdamConfig(n_iter=1))
    assert isinstance(res.state, AdamState) and res.state.t == 1
