"""Allen-Cahn and Cahn-Hilliard problem definitions and their residual operators."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Jet
from .net import ConfigurationError, DomainBox


class InsufficientOrderError(ValueError):
    pass


class ProblemKind(str, enum.Enum):
    AC = "AC"
    CH4 = "CH4"      # fourth-order Cahn-Hilliard, single output
    CHPS = "CHPS"    # phase-space Cahn-Hilliard, outputs (h, mu)


@dataclass(frozen=True)
class AllenCahnParams:
    c1_sq: float = 1e-4
    c2: float = 5.0

    def __post_init__(self):
        if self.c1_sq <= 0:
            raise ConfigurationError("c1_sq must be positive")


@dataclass(frozen=True)
class CahnHilliardParams:
    alpha: float = 0.02
    kappa: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0 or self.kappa <= 0:
            raise ConfigurationError("alpha and kappa must be positive")


def ac_initial(x):
    x = np.asarray(x, dtype=np.float64)
    return x * x * np.cos(np.pi * x)


def ch_initial(x):
    """Initial ``(h0, mu0)`` with ``mu0 = h0''`` in closed form."""
    x = np.asarray(x, dtype=np.float64)
    pi2 = np.pi ** 2
    g = np.exp(-4.0 * pi2 * x * x)
    h0 = np.cos(np.pi * x) - g
    mu0 = -pi2 * np.cos(np.pi * x) + (8.0 * pi2 - 64.0 * pi2 * pi2 * x * x) * g
    return h0, mu0


def _need(jet: Jet, order: int, dt: bool = False):
    if jet.order < order or (dt and not jet.has_dt):
        raise InsufficientOrderError(
            f"residual needs spatial order {order}{' and d/dt' if dt else ''}, jet has order {jet.order}")


def ac_residual(jet: Jet, p: AllenCahnParams) -> np.ndarray:
    _need(jet, 2, dt=True)
    h = jet.value
    return jet.dt - p.c1_sq * jet.d(2) + p.c2 * (h ** 3 - h)


def ch_phase_residuals(jet_h: Jet, jet_mu: Jet, p: CahnHilliardParams):
    """``(R1, R2)`` for h_t = (-alpha kappa mu + kappa f(h))_xx, mu = h_xx, f(h) = h^3 - h."""
    _need(jet_h, 2, dt=True)
    _need(jet_mu, 2)
    h, hx, hxx = jet_h.value, jet_h.d(1), jet_h.d(2)
    lap_chem = -p.alpha * p.kappa * jet_mu.d(2) + p.kappa * (6.0 * h * hx * hx + (3.0 * h * h - 1.0) * hxx)
    return jet_h.dt - lap_chem, jet_mu.value - hxx


def ch4_residual(jet: Jet, p: CahnHilliardParams) -> np.ndarray:
    _need(jet, 4, dt=True)
    h, hx, hxx = jet.value, jet.d(1), jet.d(2)
    return (jet.dt + p.alpha * p.kappa * jet.d(4)
            - p.kappa * (6.0 * h * hx * hx + (3.0 * h * h - 1.0) * hxx))


def spectral_dx(h, length):
    n = h.shape[-1]
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=length / n)
    hk = np.fft.rfft(h, axis=-1) * (1j * k)
    if n % 2 == 0:
        hk[..., -1] = 0.0
    return np.fft.irfft(hk, n=n, axis=-1)


def free_energy(h, c1_sq: float = 1e-4, c2: float = 5.0, length: float = 2.0):
    """Allen-Cahn energy 1/2 int |h_x|^2 + (1/c1^2) int F(h), F(h) = c2 (h^2 - 1)^2 / 4.

    ``h`` is sampled on a uniform periodic grid (endpoint excluded) along the
    last axis; leading axes (e.g. snapshots) are kept.
    """
    h = np.asarray(h, dtype=np.float64)
    dx = length / h.shape[-1]
    hx = spectral_dx(h, length)
    F = 0.25 * c2 * (h * h - 1.0) ** 2
    return dx * (0.5 * np.sum(hx * hx, axis=-1) + np.sum(F, axis=-1) / c1_sq)


@dataclass(frozen=True)
class PdeProblem:
    """A problem instance on Omega x (0, T] with periodic boundaries.

    ``boundary_order`` is the number of derivative orders (starting at the
    value) whose periodicity is penalized.
    """

    kind: ProblemKind
    params: AllenCahnParams | CahnHilliardParams
    boundary_order: int = 1
    box: DomainBox = field(default_factory=DomainBox)

    def __post_init__(self):
        object.__setattr__(self, "kind", ProblemKind(self.kind))
        if not 1 <= self.boundary_order <= 2:
            raise ConfigurationError(f"boundary_order must be 1 or 2, got {self.boundary_order}")
        want = AllenCahnParams if self.kind is ProblemKind.AC else CahnHilliardParams
        if not isinstance(self.params, want):
            raise ConfigurationError(f"{self.kind.value} needs {want.__name__}")

    @property
    def output_width(self) -> int:
        return 2 if self.kind is ProblemKind.CHPS else 1

    @property
    def residual_order(self) -> int:
        return 4 if self.kind is ProblemKind.CH4 else 2

    @property
    def reference_kind(self) -> str:
        """Which equation the spectral oracle integrates for this problem."""
        return "AC" if self.kind is ProblemKind.AC else "CH"

    def initial(self, x) -> np.ndarray:
        """Initial targets, shape (N, output_width)."""
        if self.kind is ProblemKind.AC:
            return ac_initial(x)[:, None]
        h0, mu0 = ch_initial(x)
        if self.kind is ProblemKind.CH4:
            return h0[:, None]
        return np.stack([h0, mu0], axis=1)

    def residuals(self, jet: Jet) -> list[np.ndarray]:
        if self.kind is ProblemKind.AC:
            return [ac_residual(jet, self.params)[:, 0]]
        if self.kind is ProblemKind.CH4:
            return [ch4_residual(jet, self.params)[:, 0]]
        r1, r2 = ch_phase_residuals(jet.component(0), jet.component(1), self.params)
        return [r1[:, 0], r2[:, 0]]

    def residual_partials(self, jet: Jet) -> list[np.ndarray]:
        """dR/d(jet data) for each residual, each shaped like ``jet.data``."""
        it = jet.dt_index
        if self.kind is ProblemKind.AC:
            p = self.params
            d = jet.zeros_like()
            d[it, :, 0] = 1.0
            d[2, :, 0] = -p.c1_sq
            d[0, :, 0] = p.c2 * (3.0 * jet.value[:, 0] ** 2 - 1.0)
            return [d]
        p = self.params
        ak, k = p.alpha * p.kappa, p.kappa
        h, hx, hxx = jet.value[:, 0], jet.d(1)[:, 0], jet.d(2)[:, 0]
        d1 = jet.zeros_like()
        d1[it, :, 0] = 1.0
        d1[0, :, 0] = -k * (6.0 * hx * hx + 6.0 * h * hxx)
        d1[1, :, 0] = -12.0 * k * h * hx
        d1[2, :, 0] = -k * (3.0 * h * h - 1.0)
        if self.kind is ProblemKind.CH4:
            d1[4, :, 0] = ak
            return [d1]
        d1[2, :, 1] = ak
        d2 = jet.zeros_like()
        d2[0, :, 1] = 1.0
        d2[2, :, 0] = -1.0
        return [d1, d2]


def allen_cahn(c1_sq: float = 1e-4, c2: float = 5.0, boundary_order: int = 2) -> PdeProblem:
    return PdeProblem(ProblemKind.AC, AllenCahnParams(c1_sq, c2), boundary_order)


def cahn_hilliard(alpha: float = 0.02, kappa: float = 1.0, phase_space: bool = True,
                  boundary_order: int = 1) -> PdeProblem:
    kind = ProblemKind.CHPS if phase_space else ProblemKind.CH4
    return PdeProblem(kind, CahnHilliardParams(alpha, kappa), boundary_order)
