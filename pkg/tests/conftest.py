import numpy as np
import pytest

from lemma.tensor import Tensor

FD_STEP = 1e-4
FD_TOL = 1e-3


def to_float64(t: Tensor) -> Tensor:
    out = Tensor(t.data.astype(np.float64), requires_grad=t.requires_grad)
    return out


def rel_error(a: np.ndarray, n: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom))


def fd_gradient(f, t: Tensor, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar f() wrt every element of t.data."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def check_gradients(make_loss, tensors, step: float = FD_STEP, tol: float = FD_TOL):
    """Compare analytic gradients of make_loss() against central differences.

    All tensors must already hold float64 data so the finite-difference
    oracle runs the graph in double precision.
    """
    for t in tensors:
        assert t.data.dtype == np.float64
        t.zero_grad()
    loss = make_loss()
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        numeric = fd_gradient(lambda: make_loss().item(), t, step)
        worst = max(worst, rel_error(a, numeric))
    assert worst < tol, f"max relative gradient error {worst:.3e} >= {tol}"
    return worst


def model_to_float64(model):
    for _, p in model.params.items():
        p.data = p.data.astype(np.float64)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance-criteria pass/fail lines past output capture."""
    try:
        from test_acceptance import RESULT_LINES
    except ImportError:
        return
    if RESULT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in RESULT_LINES:
            terminalreporter.write_line(line)
