import numpy as np
import pytest

from graphcond.dataio import make_planted_dataset
from graphcond.graphs import build_knn_graph


def central_difference(f, arr: np.ndarray, idx, h: float = 1e-5) -> float:
    """(f(x + h e_idx) - f(x - h e_idx)) / 2h, restoring ``arr`` afterwards."""
    old = arr[idx]
    arr[idx] = old + h
    up = f()
    arr[idx] = old - h
    down = f()
    arr[idx] = old
    return (up - down) / (2 * h)


def rel_error(analytic, numeric) -> float:
    """Largest absolute discrepancy relative to the tensor's gradient scale."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


@pytest.fixture
def small_planted():
    return make_planted_dataset(60, 100, 8, seed=3)


@pytest.fixture
def knn_graphs():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((12, 6))
    return x, [build_knn_graph(x[:, j], 5) for j in range(6)]


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append((name, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].split()[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
