import hashlib
from pathlib import Path

import numpy as np
import pytest

from bcpinn import oracle
from bcpinn.autodiff import Jet

ROOT = Path(__file__).resolve().parent.parent


def _oracle_digest() -> str:
    return hashlib.sha256(Path(oracle.__file__).read_bytes()).hexdigest()[:16]


def _cached_reference(request, kind: str):
    cache_dir = Path(request.config.cache.mkdir("bcpinn-references"))
    path = cache_dir / f"{kind}-{_oracle_digest()}.bin"
    if path.exists():
        return oracle.read_reference(path)
    sol = oracle.solve_reference(kind)
    oracle.write_reference(sol, path)
    return sol


@pytest.fixture(scope="session")
def ac_reference(request):
    """Allen-Cahn reference on the 512 x 201 grid (cached across sessions)."""
    return _cached_reference(request, "AC")


@pytest.fixture(scope="session")
def ch_reference(request):
    return _cached_reference(request, "CH")


def make_jet(n_points, order, with_dt, fields):
    """Jet from closed-form derivative arrays.

    ``fields`` is a list (one per output) of dicts mapping channel name
    ("value", 1..order, "dt") to arrays of length ``n_points`` (missing = 0).
    """
    channels = 1 + order + int(with_dt)
    data = np.zeros((channels, n_points, len(fields)))
    for k, f in enumerate(fields):
        for key, arr in f.items():
            idx = 0 if key == "value" else (order + 1 if key == "dt" else int(key))
            data[idx, :, k] = arr
    return Jet(data, order, with_dt)


def central_fd(fun, theta, idx, h):
    tp = theta.copy()
    tm = theta.copy()
    tp[idx] += h
    tm[idx] -= h
    return (fun(tp) - fun(tm)) / (2.0 * h)


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
