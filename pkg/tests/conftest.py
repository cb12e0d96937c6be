import numpy as np
import pytest

from mdrobust.autodiff import Tensor, backward


def numeric_grad(f, x: np.ndarray, h: float = 1e-5, index=None) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``; ``index`` limits to some coordinates."""
    x = np.array(x, dtype=np.float64)
    coords = [tuple(i) for i in np.ndindex(x.shape)] if index is None else index
    out = np.zeros(len(coords))
    for k, idx in enumerate(coords):
        step = h * max(1.0, abs(x[idx]))
        xp = x.copy()
        xp[idx] += step
        xm = x.copy()
        xm[idx] -= step
        out[k] = (f(xp) - f(xm)) / (2 * step)
    return out if index is not None else out.reshape(x.shape)


def rel_error(a, b, floor: float = 1e-5) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def analytic_grad():
    def _grad(build_loss, x: np.ndarray) -> np.ndarray:
        t = Tensor(x, requires_grad=True)
        backward(build_loss(t))
        return t.grad

    return _grad


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
