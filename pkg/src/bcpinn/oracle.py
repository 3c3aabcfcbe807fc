"""Fourier pseudospectral reference solver with ETDRK4 time stepping.

Solves, on the periodic interval [x_min, x_max),

    AC:  h_t = c1^2 h_xx - c2 (h^3 - h)
    CH:  h_t = -alpha kappa h_xxxx + kappa (h^3 - h)_xx

with the stiff linear part integrated exactly (Cox-Matthews ETDRK4, coefficient
functions evaluated by contour averaging as in Kassam & Trefethen 2005).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .net import ConfigurationError
from .pde import AllenCahnParams, CahnHilliardParams, PdeProblem, ac_initial, ch_initial

MAGIC = b"BCPN"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


class ReferenceFormatError(ValueError):
    pass


class IncompatibleVersionError(ReferenceFormatError):
    pass


class CorruptReferenceError(ReferenceFormatError):
    pass


class BlowUpError(FloatingPointError):
    def __init__(self, time: float, max_abs: float):
        super().__init__(f"reference solution blew up at t={time:.6g} (max |h| = {max_abs:.3g})")
        self.time = time


@dataclass
class ReferenceSolution:
    x: np.ndarray
    t: np.ndarray
    h: np.ndarray          # (nt, nx), row = snapshot
    problem: dict = field(default_factory=dict)

    @property
    def nx(self) -> int:
        return self.x.size

    @property
    def nt(self) -> int:
        return self.t.size

    def snapshot(self, time: float) -> np.ndarray:
        j = int(np.argmin(np.abs(self.t - time)))
        if not np.isclose(self.t[j], time, atol=1e-12):
            raise KeyError(f"no snapshot at t={time}")
        return self.h[j]


def _etdrk4_coeffs(lin, dt, n_contour=32):
    r = np.exp(1j * np.pi * (np.arange(1, n_contour + 1) - 0.5) / n_contour)
    LR = dt * lin[:, None] + r[None, :]
    eLR = np.exp(LR)
    Q = dt * np.real(np.mean((np.exp(LR / 2) - 1.0) / LR, axis=1))
    f1 = dt * np.real(np.mean((-4.0 - LR + eLR * (4.0 - 3.0 * LR + LR ** 2)) / LR ** 3, axis=1))
    f2 = dt * np.real(np.mean((2.0 + LR + eLR * (LR - 2.0)) / LR ** 3, axis=1))
    f3 = dt * np.real(np.mean((-4.0 - 3.0 * LR - LR ** 2 + eLR * (4.0 - LR)) / LR ** 3, axis=1))
    return np.exp(dt * lin), np.exp(dt * lin / 2), Q, f1, f2, f3


class SpectralProblem:
    """Linear symbol and nonlinear term of a periodic 1D semilinear PDE in Fourier space."""

    def __init__(self, kind: str, params, nx: int, x_min=-1.0, x_max=1.0, dealias=True):
        self.kind = kind
        self.params = params
        self.nx = nx
        length = x_max - x_min
        self.x = x_min + length * np.arange(nx) / nx
        self.k = 2.0 * np.pi * np.fft.rfftfreq(nx, d=length / nx)
        m = np.arange(self.k.size)
        self.mask = (m <= nx // 3).astype(float) if dealias else np.ones(self.k.size)
        k2 = self.k ** 2
        if kind == "AC":
            self.linear = -params.c1_sq * k2
            self._nl_scale = -params.c2 * self.mask
        elif kind == "CH":
            self.linear = -params.alpha * params.kappa * k2 * k2
            self._nl_scale = -params.kappa * k2 * self.mask
        elif kind == "HEAT":
            self.linear = -params * k2
            self._nl_scale = None
        else:
            raise ConfigurationError(f"unknown spectral problem {kind}")

    def nonlinear(self, vk):
        if self._nl_scale is None:
            return np.zeros_like(vk)
        h = np.fft.irfft(vk, n=self.nx)
        return self._nl_scale * np.fft.rfft(h * h * h - h)


def _integrate(sp: SpectralProblem, h0, dt, T, snapshots, method="etdrk4", blowup=10.0):
    n_steps_total = T / dt
    per_snap = (T / (snapshots - 1)) / dt
    if abs(per_snap - round(per_snap)) > 1e-6 or abs(n_steps_total - round(n_steps_total)) > 1e-6:
        raise ConfigurationError(f"dt={dt} does not divide the snapshot spacing {T / (snapshots - 1)}")
    per_snap = int(round(per_snap))
    out = np.empty((snapshots, sp.nx))
    out[0] = h0
    v = np.fft.rfft(h0)
    N = sp.nonlinear
    if method == "etdrk4":
        E, E2, Q, f1, f2, f3 = _etdrk4_coeffs(sp.linear, dt)

        def step(v):
            Nv = N(v)
            a = E2 * v + Q * Nv
            Na = N(a)
            b = E2 * v + Q * Na
            Nb = N(b)
            c = E2 * a + Q * (2.0 * Nb - Nv)
            Nc = N(c)
            return E * v + Nv * f1 + 2.0 * (Na + Nb) * f2 + Nc * f3
    elif method == "rk4":
        L = sp.linear

        def rhs(v):
            return L * v + N(v)

        def step(v):
            k1 = rhs(v)
            k2 = rhs(v + 0.5 * dt * k1)
            k3 = rhs(v + 0.5 * dt * k2)
            k4 = rhs(v + dt * k3)
            return v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise ConfigurationError(f"unknown integrator {method!r}")
    for j in range(1, snapshots):
        for _ in range(per_snap):
            v = step(v)
        h = np.fft.irfft(v, n=sp.nx)
        peak = np.max(np.abs(h)) if np.all(np.isfinite(h)) else np.inf
        if peak > blowup:
            raise BlowUpError(j * per_snap * dt, peak)
        out[j] = h
    return out


def solve_reference(problem: PdeProblem | str, nx: int = 512, dt: float = 1e-5,
                    snapshots: int = 201, T: float = 1.0, params=None, method: str = "etdrk4",
                    dealias: bool = True, initial=None) -> ReferenceSolution:
    """Reference solution on the uniform ``nx`` x ``snapshots`` grid.

    ``problem`` is a :class:`PdeProblem` or one of ``"AC"``, ``"CH"``, ``"HEAT"``
    (for ``"HEAT"``, ``params`` is the diffusivity and ``initial`` is required).
    """
    if isinstance(problem, PdeProblem):
        kind, params = problem.reference_kind, problem.params
        x_min, x_max = problem.box.x_min, problem.box.x_max
    else:
        kind = problem.upper()
        if params is None:
            params = AllenCahnParams() if kind == "AC" else CahnHilliardParams()
        x_min, x_max = -1.0, 1.0
    sp = SpectralProblem(kind, params, nx, x_min, x_max, dealias)
    if initial is None:
        if kind == "AC":
            h0 = ac_initial(sp.x)
        elif kind == "CH":
            h0 = ch_initial(sp.x)[0]
        else:
            raise ConfigurationError("HEAT reference needs an explicit initial condition")
    else:
        h0 = initial(sp.x) if callable(initial) else np.asarray(initial, dtype=np.float64)
    t = T * np.arange(snapshots) / (snapshots - 1)
    h = _integrate(sp, h0, dt, T, snapshots, method)
    desc = {"kind": kind, "dt": dt, "method": method, "dealias": dealias}
    if isinstance(params, (AllenCahnParams, CahnHilliardParams)):
        desc.update(vars(params))
    return ReferenceSolution(sp.x, t, h, desc)


def write_reference(sol: ReferenceSolution, path) -> None:
    nt, nx = sol.h.shape
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (sol.x, sol.t, sol.h))
    Path(path).write_bytes(_HEADER.pack(MAGIC, VERSION, nx, nt) + payload)


def read_reference(path) -> ReferenceSolution:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptReferenceError(f"{path}: truncated header")
    magic, version, nx, nt = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ReferenceFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise IncompatibleVersionError(f"{path}: format version {version}, expected {VERSION}")
    n = nx + nt + nx * nt
    body = raw[_HEADER.size:]
    if len(body) != 8 * n:
        raise CorruptReferenceError(f"{path}: expected {8 * n} payload bytes, found {len(body)}")
    data = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return ReferenceSolution(data[:nx].copy(), data[nx:nx + nt].copy(),
                             data[nx + nt:].reshape(nt, nx).copy())


def export_csv(sol: ReferenceSolution, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "t", "h"])
        for j, tj in enumerate(sol.t):
            for i, xi in enumerate(sol.x):
                w.writerow([repr(float(xi)), repr(float(tj)), repr(float(sol.h[j, i]))])
