"""Relative error metrics against a reference solution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ZeroReferenceError(ValueError):
    pass


def _pair(predicted, reference):
    p = np.asarray(predicted, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if p.shape != r.shape:
        raise ValueError(f"grids not congruent: {p.shape} vs {r.shape}")
    norm = np.sqrt(np.sum(r * r))
    if norm == 0.0:
        raise ZeroReferenceError("reference solution has zero norm")
    return p, r, norm


def relative_total_error(predicted, reference) -> float:
    """RMS error normalized by the RMS of the reference (equivalently ||p - r|| / ||r||)."""
    p, r, norm = _pair(predicted, reference)
    return float(np.sqrt(np.sum((p - r) ** 2)) / norm)


def relative_error_field(predicted, reference) -> np.ndarray:
    """Pointwise |p - r| divided by the global L2 norm of the reference."""
    p, r, norm = _pair(predicted, reference)
    return np.abs(p - r) / norm


def snapshot_errors(predicted, reference) -> tuple[np.ndarray, np.ndarray]:
    """Per-row (snapshot) L2 error and relative L2 error for (nt, nx) grids."""
    p = np.asarray(predicted, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if p.shape != r.shape:
        raise ValueError(f"grids not congruent: {p.shape} vs {r.shape}")
    l2 = np.sqrt(np.sum((p - r) ** 2, axis=-1))
    ref = np.sqrt(np.sum(r * r, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(ref > 0, l2 / ref, np.nan)
    return l2, rel


@dataclass
class ErrorReport:
    epsilon_total: float
    epsilon: np.ndarray
    snapshot_l2: np.ndarray
    snapshot_relative: np.ndarray

    @classmethod
    def compute(cls, predicted, reference) -> "ErrorReport":
        l2, rel = snapshot_errors(predicted, reference)
        return cls(relative_total_error(predicted, reference),
                   relative_error_field(predicted, reference), l2, rel)
