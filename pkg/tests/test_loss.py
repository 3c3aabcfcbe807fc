import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from bcpinn import loss as loss_mod
from bcpinn.autodiff import Jet, NonFiniteLossError
from bcpinn.loss import (LossBreakdown, LossOptions, SegmentObjective, mse_boundary, mse_compat,
                         mse_initial, mse_residual, total_loss)
from bcpinn.net import MlpParameters, forward, normalize, xavier_init
from bcpinn.pde import allen_cahn, cahn_hilliard
from bcpinn.sampling import allen_cahn_schedule, build_segment_sets, cahn_hilliard_schedule, reference_x_grid

from conftest import central_fd, rel_err

DUMMY = MlpParameters([2, 1, 1])


@pytest.fixture
def analytic(monkeypatch):
    """Replace the network jet pass with closed-form fields.

    ``install(fn)`` where ``fn(x, t, order) -> list of per-output lists
    [value, d1, ..., d_order, dt]``.
    """
    def install(fn):
        def fake(params, points, box, order, with_dt, head, need_grad=True, chunk_size=None, workers=1):
            pts = np.asarray(points, dtype=float)
            outs = fn(pts[:, 0], pts[:, 1], order)
            channels = 1 + order + int(with_dt)
            data = np.zeros((channels, len(pts), len(outs)))
            for k, chans in enumerate(outs):
                for c in range(order + 1):
                    data[c, :, k] = chans[c]
                if with_dt:
                    data[order + 1, :, k] = chans[-1]
            val, _ = head(Jet(data, order, with_dt), slice(0, len(pts)))
            return val, None
        monkeypatch.setattr(loss_mod, "accumulate", fake)
    return install


def _x_squared(x, t, order):
    chans = [x ** 2, 2 * x, 2 + 0 * x, 0 * x, 0 * x][:order + 1]
    return [chans + [0 * x]]


def test_boundary_examples(analytic):
    ac = allen_cahn()
    pts = np.array([[1.0, 0.1], [1.0, 0.7]])
    analytic(_x_squared)
    assert mse_boundary(DUMMY, pts, ac, n_d=1) == 0.0
    assert mse_boundary(DUMMY, pts, ac, n_d=2) == 16.0
    analytic(lambda x, t, o: [[np.full_like(x, 3.0)] + [0 * x] * o + [0 * x]])
    assert mse_boundary(DUMMY, pts, ac, n_d=2) == 0.0


def test_residual_examples(analytic):
    ac = allen_cahn()
    analytic(lambda x, t, o: [[t, 0 * x, 0 * x, 1 + 0 * x]])   # h = t, evaluated at t = 0
    pt = np.array([[0.3, 0.0]])
    assert mse_residual(DUMMY, pt, ac) == 1.0
    assert mse_residual(DUMMY, pt, ac, log_variant=True) == pytest.approx(math.log(2.0), abs=1e-15)
    assert mse_residual(DUMMY, pt, ac, log_variant=True) == pytest.approx(0.6931, abs=1e-4)
    analytic(lambda x, t, o: [[np.ones_like(x), 0 * x, 0 * x, 0 * x]])
    pts = np.random.default_rng(0).uniform(0, 1, (10, 2))
    assert mse_residual(DUMMY, pts, ac) == 0.0
    assert mse_residual(DUMMY, pts, ac, log_variant=True) == 0.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_residual_reports_point(analytic):
    def blow(x, t, o):
        v = np.where(x > 0.5, np.inf, 0.0)
        return [[v, 0 * x, 0 * x, 0 * x]]
    analytic(blow)
    pts = np.array([[0.1, 0.2], [0.9, 0.4]])
    with pytest.raises(NonFiniteLossError) as info:
        mse_residual(DUMMY, pts, allen_cahn())
    assert info.value.component == "mse_r"
    assert info.value.point == (0.9, 0.4)


def test_initial_examples():
    p = xavier_init([2, 6, 1], 0)
    x = reference_x_grid()
    pts = np.column_stack([x, np.zeros_like(x)])
    ac = allen_cahn()
    pred = forward(p, normalize(pts, ac.box))
    assert mse_initial(p, pts, pred, ac) == 0.0
    assert mse_initial(p, pts, pred - 1.0, ac) == pytest.approx(1.0, rel=1e-14)
    zero = MlpParameters([2, 6, 1])
    expected = np.mean((x ** 2 * np.cos(np.pi * x)) ** 2)
    got = mse_initial(zero, pts, ac.initial(x), ac)
    assert got == pytest.approx(expected, rel=1e-14)
    # independent oracle: the continuous mean over [-1, 1] by adaptive quadrature
    integral = quad(lambda v: (v ** 2 * math.cos(math.pi * v)) ** 2, -1.0, 1.0)[0] / 2.0
    assert got == pytest.approx(integral, abs=1e-5)
    assert got == pytest.approx(0.14297, abs=1e-5)
    with pytest.raises(ValueError):
        mse_initial(p, np.empty((0, 2)), np.empty((0, 1)), ac)


def test_initial_sums_both_fields_for_phase_space():
    ch = cahn_hilliard()
    zero = MlpParameters([2, 3, 2])
    zero.biases[-1][:] = [1.0, 2.0]
    pts = np.column_stack([np.linspace(-1, 1, 5), np.zeros(5)])
    assert mse_initial(zero, pts, np.zeros((5, 2)), ch) == pytest.approx(1.0 + 4.0)


def test_compat_examples():
    ac = allen_cahn()
    p = xavier_init([2, 8, 8, 1], 1)
    pts = np.random.default_rng(3).uniform(0, 1, (300, 2))
    stored = forward(p, normalize(pts, ac.box))[:, 0]
    assert mse_compat(p, pts, stored, ac) == 0.0
    two = MlpParameters([2, 3, 1])
    two.biases[-1][:] = 2.0
    assert mse_compat(two, pts, np.zeros(300), ac) == 4.0
    assert mse_compat(two, np.empty((0, 2)), np.empty(0), ac) == 0.0
    with pytest.raises(ValueError):
        mse_compat(two, pts, np.zeros(5), ac)


def test_compat_uses_h_field_only():
    ch = cahn_hilliard()
    p = MlpParameters([2, 3, 2])
    p.biases[-1][:] = [1.0, 100.0]
    assert mse_compat(p, np.array([[0.0, 0.1]]), np.array([0.0]), ch) == 1.0


def test_breakdown_additivity():
    assert LossBreakdown().total == 0.0
    b = LossBreakdown(1.0, 2.0, 3.0, 4.0)
    assert b.total == 10.0
    assert b.as_dict()["total"] == 10.0


def test_total_equals_independent_components():
    ac = allen_cahn()
    sch = allen_cahn_schedule(n_collocation=400, n_initial=64)
    p = xavier_init([2, 10, 10, 1], 2)
    sets = build_segment_sets(sch, 1, 0, ac, x_grid=reference_x_grid(64))
    b = total_loss(p, sets, ac)
    assert b.mse_s == 0.0
    assert b.mse_i == mse_initial(p, sets.initial, sets.initial_targets, ac)
    assert b.mse_b == mse_boundary(p, sets.boundary, ac)
    assert b.mse_r == mse_residual(p, sets.collocation, ac)
    assert b.total == b.mse_i + b.mse_b + b.mse_r


def test_compat_required_when_points_present():
    ac = allen_cahn()
    sch = allen_cahn_schedule(n_collocation=50, n_initial=16)
    sets = build_segment_sets(sch, 2, 0, ac, x_grid=reference_x_grid(16))
    with pytest.raises(ValueError):
        total_loss(xavier_init([2, 4, 1], 0), sets, ac)


def test_log_residual_never_exceeds_plain():
    ch = cahn_hilliard()
    p = xavier_init([2, 12, 12, 2], 5)
    pts = np.random.default_rng(4).uniform([-1, 0], [1, 1], (500, 2))
    plain = mse_residual(p, pts, ch)
    logv = mse_residual(p, pts, ch, log_variant=True)
    assert 0.0 <= logv <= plain


def test_permutation_invariance():
    ac = allen_cahn()
    p = xavier_init([2, 10, 1], 6)
    pts = np.random.default_rng(5).uniform([-1, 0], [1, 1], (700, 2))
    perm = np.random.default_rng(6).permutation(700)
    a = mse_residual(p, pts, ac)
    b = mse_residual(p, pts[perm], ac)
    assert b == pytest.approx(a, rel=1e-13)
    opts = LossOptions(chunk_size=None)
    assert mse_residual(p, pts, ac, opts=opts) == pytest.approx(a, rel=1e-13)


def _component_fd(problem, dims, fn, seed):
    p = xavier_init(dims, seed)
    v, g = fn(p, True)
    f = lambda th: fn(p.with_flat(th), False)
    fd = np.array([central_fd(f, p.flat, i, 1e-6) for i in range(p.size)])
    return rel_err(fd, g, floor=1e-5)


@pytest.mark.parametrize("kind", ["AC", "CHPS", "CH4"])
def test_component_gradients_match_finite_differences(kind):
    problem = {"AC": allen_cahn(), "CHPS": cahn_hilliard(), "CH4": cahn_hilliard(phase_space=False)}[kind]
    w = problem.output_width
    dims = [2, 4, 3, w]
    rng = np.random.default_rng(1)
    pts = rng.uniform([-1, 0], [1, 1], (25, 2))
    bnd = np.column_stack([np.ones(6), rng.uniform(0, 1, 6)])
    targets = rng.normal(size=(25, w))
    stored = rng.normal(size=25)
    cases = {
        "mse_i": lambda q, g: mse_initial(q, pts, targets, problem, with_grad=g),
        "mse_b1": lambda q, g: mse_boundary(q, bnd, problem, n_d=1, with_grad=g),
        "mse_b2": lambda q, g: mse_boundary(q, bnd, problem, n_d=2, with_grad=g),
        "mse_r": lambda q, g: mse_residual(q, pts, problem, with_grad=g),
        "mse_r_log": lambda q, g: mse_residual(q, pts, problem, log_variant=True, with_grad=g),
        "mse_s": lambda q, g: mse_compat(q, pts, stored, problem, with_grad=g),
    }
    for name, fn in cases.items():
        assert _component_fd(problem, dims, fn, 3) < 1e-5, name


def test_segment_objective_gradient_twenty_parameter_net():
    ac = allen_cahn()
    sch = allen_cahn_schedule(n_collocation=60, n_initial=16, n_boundary=5)
    x16 = reference_x_grid(16)
    sets = build_segment_sets(sch, 2, 1, ac, x_grid=x16)
    stored = np.random.default_rng(0).normal(size=len(sets.compat))
    dims = [2, 3, 2, 1]
    p = xavier_init(dims, 9)
    assert p.size == 20
    obj = SegmentObjective(ac, sets, stored)
    b, g = obj(p)
    assert b.mse_s > 0
    f = lambda th: obj(p.with_flat(th))[0].total
    fd = np.array([central_fd(f, p.flat, i, 1e-6) for i in range(p.size)])
    assert rel_err(fd, g, floor=1e-5) < 1e-5
    assert obj.n_evals == 1 + 2 * p.size


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000))
def test_components_are_nonnegative(seed):
    ch = cahn_hilliard()
    sch = cahn_hilliard_schedule(n_collocation=40, n_initial=16)
    sets = build_segment_sets(sch, 1, seed, ch, x_grid=reference_x_grid(16))
    b = total_loss(xavier_init([2, 5, 2], seed), sets, ch, log_residual=bool(seed % 2))
    assert min(b.mse_i, b.mse_b, b.mse_r, b.mse_s) >= 0.0
