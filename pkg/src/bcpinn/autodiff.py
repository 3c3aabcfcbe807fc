"""Input-derivative jets of the tanh network and reverse-mode parameter gradients.

Spatial derivatives up to fourth order are carried through every layer as
truncated Taylor coefficients (Faa di Bruno through ``tanh``), with the first
time derivative alongside. The reverse pass walks the recorded jet forward
pass, so parameter gradients of any loss built from jet channels are exact.

Jet arrays are stacked as ``(channels, points, width)`` with channel order
``value, d/dx, ..., d^k/dx^k[, d/dt]``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

from .net import DomainBox, MlpParameters, normalize

try:
    from . import _kernels
except ImportError:  # pragma: no cover - numba missing
    _kernels = None

MAX_ORDER = 4


class UnsupportedOrderError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    """A loss or gradient became NaN/inf; ``component`` names the culprit."""

    def __init__(self, message: str, component: str | None = None, point=None):
        super().__init__(message)
        self.component = component
        self.point = point


class Jet:
    """Network outputs and their physical-coordinate input derivatives at N points."""

    def __init__(self, data: np.ndarray, order: int, has_dt: bool):
        self.data = data
        self.order = order
        self.has_dt = has_dt

    @property
    def value(self) -> np.ndarray:
        return self.data[0]

    @property
    def dx(self) -> list[np.ndarray]:
        """``dx[j-1]`` is the j-th spatial derivative."""
        return [self.data[j] for j in range(1, self.order + 1)]

    def d(self, j: int) -> np.ndarray:
        """j-th spatial derivative, ``d(0)`` being the value."""
        if j > self.order:
            raise UnsupportedOrderError(f"jet has order {self.order}, derivative {j} requested")
        return self.data[j]

    @property
    def dt(self) -> np.ndarray | None:
        return self.data[self.order + 1] if self.has_dt else None

    @property
    def dt_index(self) -> int:
        return self.order + 1

    def component(self, i: int) -> "Jet":
        return Jet(self.data[..., i:i + 1], self.order, self.has_dt)

    def zeros_like(self) -> np.ndarray:
        return np.zeros_like(self.data)


def _tanh_coeffs(y, order):
    """d^j tanh / dz^j expressed through y = tanh(z), j = 1..order."""
    y2 = y * y
    t = [None, 1.0 - y2]
    if order >= 2:
        t.append(-2.0 * y * t[1])
    if order >= 3:
        t.append(-2.0 + y2 * (8.0 - 6.0 * y2))
    if order >= 4:
        t.append(y * (16.0 + y2 * (-40.0 + 24.0 * y2)))
    return t


def _tanh_jet(z, order, has_dt):
    out = np.empty_like(z)
    y = np.tanh(z[0])
    out[0] = y
    if order == 0 and not has_dt:
        return out
    t = _tanh_coeffs(y, max(order, 1))
    if order >= 1:
        z1 = z[1]
        out[1] = t[1] * z1
    if order >= 2:
        z2 = z[2]
        out[2] = t[2] * z1 * z1 + t[1] * z2
    if order >= 3:
        z3 = z[3]
        out[3] = t[3] * z1 ** 3 + 3.0 * t[2] * z1 * z2 + t[1] * z3
    if order >= 4:
        out[4] = (t[4] * z1 ** 4 + 6.0 * t[3] * z1 * z1 * z2
                  + t[2] * (3.0 * z2 * z2 + 4.0 * z1 * z3) + t[1] * z[4])
    if has_dt:
        out[order + 1] = t[1] * z[order + 1]
    return out


def _tanh_jet_vjp(g, z, y, order, has_dt):
    """Pull the cotangent ``g`` of the tanh jet back onto its input jet ``z``."""
    t = _tanh_coeffs(y, max(order, 1))
    gz = np.empty_like(g)
    if order == 0 and not has_dt:
        gz[0] = g[0] * t[1]
        return gz
    y2 = y * y
    # cotangents of the coefficient functions t_j(y)
    gt1 = np.zeros_like(y)
    for j in range(1, order + 1):
        gt1 += g[j] * z[j]
    if has_dt:
        gt1 += g[order + 1] * z[order + 1]
    gy = g[0] - 2.0 * y * gt1
    if order >= 2:
        z1, z2 = z[1], z[2]
        gt2 = g[2] * z1 * z1
        if order >= 3:
            gt2 += 3.0 * g[3] * z1 * z2
            gt3 = g[3] * z1 ** 3
        if order >= 4:
            gt2 += g[4] * (3.0 * z2 * z2 + 4.0 * z1 * z[3])
            gt3 += 6.0 * g[4] * z1 * z1 * z2
            gy += g[4] * z1 ** 4 * (16.0 + y2 * (-120.0 + 120.0 * y2))
        gy += gt2 * (6.0 * y2 - 2.0)
        if order >= 3:
            gy += gt3 * y * (16.0 - 24.0 * y2)
    gz[0] = gy * t[1]
    if order >= 1:
        z1 = z[1]
        acc = g[1] * t[1]
        if order >= 2:
            acc += 2.0 * g[2] * t[2] * z1
        if order >= 3:
            acc += g[3] * (3.0 * t[3] * z1 * z1 + 3.0 * t[2] * z[2])
        if order >= 4:
            acc += g[4] * (4.0 * t[4] * z1 ** 3 + 12.0 * t[3] * z1 * z[2] + 4.0 * t[2] * z[3])
        gz[1] = acc
    if order >= 2:
        acc = g[2] * t[1]
        if order >= 3:
            acc += 3.0 * g[3] * t[2] * z1
        if order >= 4:
            acc += g[4] * (6.0 * t[3] * z1 * z1 + 6.0 * t[2] * z[2])
        gz[2] = acc
    if order >= 3:
        acc = g[3] * t[1]
        if order >= 4:
            acc += 4.0 * g[4] * t[2] * z1
        gz[3] = acc
    if order >= 4:
        gz[4] = g[4] * t[1]
    if has_dt:
        gz[order + 1] = g[order + 1] * t[1]
    return gz


def _activate(z, order, has_dt):
    if _kernels is not None:
        return _kernels.tanh_jet(z, np.tanh(z[0]), order, has_dt)
    return _tanh_jet(z, order, has_dt)


def _activate_vjp(g, z, y, order, has_dt):
    if _kernels is not None:
        return _kernels.tanh_jet_vjp(np.ascontiguousarray(g), z, y, order, has_dt)
    return _tanh_jet_vjp(g, z, y, order, has_dt)


def _stacked_matmul(a, W):
    c, n, w = a.shape
    return (a.reshape(c * n, w) @ W).reshape(c, n, W.shape[1])


class JetTape:
    """Recorded jet forward pass for one point batch; rebuilt on every evaluation."""

    def __init__(self, params, xn, box, order, has_dt, layers):
        self.params = params
        self.xn = xn
        self.box = box
        self.order = order
        self.has_dt = has_dt
        self.layers = layers  # (pre-activation jet, activation jet) per hidden layer

    def backward(self, cotangent: np.ndarray) -> np.ndarray:
        """Vector-Jacobian product: flat parameter gradient of <cotangent, output jet>."""
        p = self.params
        grad = MlpParameters(p.layer_dims)
        g = cotangent
        n_layers = len(p.weights)
        for li in range(n_layers - 1, 0, -1):
            z, a = self.layers[li - 1]
            c, n, w = a.shape
            grad.weights[li][...] = a.reshape(c * n, w).T @ g.reshape(c * n, g.shape[2])
            grad.biases[li][...] = g[0].sum(axis=0)
            ga = _stacked_matmul(g, p.weights[li].T)
            g = _activate_vjp(ga, z, a[0], self.order, self.has_dt)
        gW0 = grad.weights[0]
        gW0[...] = self.xn.T @ g[0]
        if self.order >= 1:
            gW0[0] += self.box.x_scale * g[1].sum(axis=0)
        if self.has_dt:
            gW0[1] += self.box.t_scale * g[self.order + 1].sum(axis=0)
        grad.biases[0][...] = g[0].sum(axis=0)
        return grad.flat


def jet_forward(params: MlpParameters, points, box: DomainBox, order: int = 0,
                with_dt: bool = False) -> tuple[Jet, JetTape]:
    """Forward jet pass at physical ``points`` (N, 2), keeping the tape for backward."""
    if not 0 <= order <= MAX_ORDER:
        raise UnsupportedOrderError(f"spatial order must be in 0..{MAX_ORDER}, got {order}")
    xn = normalize(points, box)
    W0, b0 = params.weights[0], params.biases[0]
    n = xn.shape[0]
    channels = 1 + order + int(with_dt)
    z = np.zeros((channels, n, W0.shape[1]))
    z[0] = xn @ W0 + b0
    if order >= 1:
        z[1] = box.x_scale * W0[0]
    if with_dt:
        z[order + 1] = box.t_scale * W0[1]
    layers = []
    for W, b in zip(params.weights[1:], params.biases[1:]):
        a = _activate(z, order, with_dt)
        layers.append((z, a))
        z = _stacked_matmul(a, W)
        z[0] += b
    return Jet(z, order, with_dt), JetTape(params, xn, box, order, with_dt, layers)


def eval_jet(params: MlpParameters, points, box: DomainBox, order: int = 0,
             with_dt: bool = False) -> Jet:
    """Network values plus spatial derivatives up to ``order`` (and d/dt) at ``points``."""
    return jet_forward(params, points, box, order, with_dt)[0]


Head = Callable[[Jet, slice], "tuple[float, np.ndarray | None]"]


def accumulate(params: MlpParameters, points, box: DomainBox, order: int, with_dt: bool,
               head: Head, need_grad: bool = True, chunk_size: int | None = 256,
               workers: int = 1) -> tuple[float, np.ndarray | None]:
    """Sum a per-point loss over ``points`` and its parameter gradient.

    ``head(jet, rows)`` returns the summed contribution of the chunk and the
    cotangent of that sum with respect to the jet data. Chunks are reduced in
    index order, so results do not depend on ``workers``.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    step = n if not chunk_size else chunk_size
    slices = [slice(i, min(i + step, n)) for i in range(0, n, max(step, 1))]

    def run(sl):
        jet, tape = jet_forward(params, points[sl], box, order, with_dt)
        val, cot = head(jet, sl)
        return val, (tape.backward(cot) if need_grad else None)

    if workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, slices))
    else:
        results = [run(sl) for sl in slices]
    total = 0.0
    grad = np.zeros(params.size) if need_grad else None
    for val, g in results:
        total += val
        if need_grad:
            grad += g
    return total, grad


def loss_gradient(evaluator, params: MlpParameters):
    """Evaluate ``evaluator(params) -> (loss, grad)`` and reject non-finite results.

    ``loss`` may be a float or any object with ``total`` and ``as_dict()``.
    """
    loss, grad = evaluator(params)
    total = float(getattr(loss, "total", loss))
    if not np.isfinite(total):
        bad = None
        if hasattr(loss, "as_dict"):
            bad = next((k for k, v in loss.as_dict().items() if not np.isfinite(v)), None)
        raise NonFiniteLossError(f"non-finite loss (component {bad})", component=bad)
    if grad is not None and not np.all(np.isfinite(grad)):
        raise NonFiniteLossError("non-finite gradient", component="gradient")
    return loss, grad
