"""CSV and JSON exports of a trained network against a reference solution."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .metrics import ErrorReport
from .net import MlpParameters
from .oracle import ReferenceSolution
from .pde import PdeProblem, ProblemKind, spectral_dx
from .trainer import predict_grid, term_decomposition


def _fmt(v) -> str:
    return repr(float(v))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def restrict_reference(ref: ReferenceSolution, t_max: float) -> ReferenceSolution:
    """Snapshots with t <= t_max (the time horizon a run was trained on)."""
    keep = ref.t <= t_max + 1e-12
    if not keep.any():
        raise ValueError(f"reference has no snapshots within [0, {t_max}]")
    return ReferenceSolution(ref.x, ref.t[keep], ref.h[keep], ref.problem)


def long_form(x, t, *fields):
    """Rows (x, t, field...) in time-major order."""
    tt, xx = np.meshgrid(t, x, indexing="ij")
    return np.column_stack([xx.ravel(), tt.ravel(), *(np.asarray(f).ravel() for f in fields)])


def read_solution_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """``(h_pred, h_true)`` columns of a solution CSV written by :func:`write_evaluation`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 2], data[:, 3]


def reference_terms(problem: PdeProblem, h_true: np.ndarray, length: float) -> dict:
    hxx = spectral_dx(spectral_dx(h_true, length), length)
    p = problem.params
    if problem.kind is ProblemKind.AC:
        return {"h_true": h_true, "diffusion_true": p.c1_sq * hxx,
                "reaction_true": p.c2 * (h_true ** 3 - h_true)}
    return {"h_true": h_true, "f_true": h_true ** 3 - h_true, "mu_true": hxx}


def write_evaluation(params: MlpParameters, problem: PdeProblem, reference: ReferenceSolution,
                     out_dir, snapshot_times=(0.25, 0.75), term_time: float = 0.25,
                     extra: dict | None = None) -> dict:
    """Write every evaluation artifact into ``out_dir`` and return the summary.

    Files: ``solution.csv`` (x, t, h_pred, h_true), ``error_map.csv`` (x, t,
    epsilon), ``snapshot_errors.csv`` (t, l2, relative), one wide
    ``snapshot_t<time>.csv`` (x, h_true, h_pred) per requested time,
    ``terms_t<time>.csv`` and ``summary.json``. Output depends only on the
    inputs (training wall-clock arrives through ``extra``).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref = restrict_reference(reference, problem.box.t_max)
    pred = predict_grid(params, ref.x, ref.t, problem.box)[..., 0]
    report = ErrorReport.compute(pred, ref.h)

    _write_rows(out / "solution.csv", ["x", "t", "h_pred", "h_true"],
                long_form(ref.x, ref.t, pred, ref.h))
    _write_rows(out / "error_map.csv", ["x", "t", "epsilon"],
                long_form(ref.x, ref.t, report.epsilon))
    _write_rows(out / "snapshot_errors.csv", ["t", "l2", "relative"],
                np.column_stack([ref.t, report.snapshot_l2, report.snapshot_relative]))

    written = []
    for tm in snapshot_times:
        j = int(np.argmin(np.abs(ref.t - tm)))
        if abs(ref.t[j] - tm) > 1e-9:
            continue
        _write_rows(out / f"snapshot_t{tm:g}.csv", ["x", "h_true", "h_pred"],
                    np.column_stack([ref.x, ref.h[j], pred[j]]))
        written.append(float(tm))

    terms_file = None
    if ref.t[0] - 1e-9 <= term_time <= ref.t[-1] + 1e-9:
        terms = term_decomposition(params, problem, ref.x, term_time)
        j = int(np.argmin(np.abs(ref.t - term_time)))
        if abs(ref.t[j] - term_time) <= 1e-9:
            length = problem.box.x_max - problem.box.x_min
            terms.update(reference_terms(problem, ref.h[j], length))
        terms_file = f"terms_t{term_time:g}.csv"
        _write_rows(out / terms_file, list(terms), np.column_stack(list(terms.values())))

    summary = {
        "epsilon_total": report.epsilon_total,
        "nx": int(ref.x.size),
        "nt": int(ref.t.size),
        "t_max": float(ref.t[-1]),
        "snapshot_files": written,
        "terms_file": terms_file,
        "max_snapshot_relative_error": float(np.nanmax(report.snapshot_relative)),
    }
    if extra:
        summary.update(extra)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
