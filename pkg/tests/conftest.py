import numpy as np
import pytest

from advrl.nn import DenseLayer, Network, forward


def random_net(rng, sizes, bias=True):
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        w = rng.normal(0, 1 / np.sqrt(n_in), size=(n_out, n_in))
        b = rng.normal(0, 0.1, size=n_out) if bias else np.zeros(n_out)
        layers.append(DenseLayer(w, b, "identity" if i == len(sizes) - 2 else "relu"))
    return Network(layers)


def fd_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` at array ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def assert_fd_close(analytic, numeric, rel=1e-4, abs_floor=1e-7):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    err = np.abs(analytic - numeric)
    bound = np.maximum(rel * np.maximum(np.abs(analytic), np.abs(numeric)), abs_floor)
    worst = np.max(err - bound) if err.size else 0
    assert np.all(err <= bound), f"max excess {worst}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
