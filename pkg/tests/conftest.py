import numpy as np
import pytest

from aehpinn.network import NetworkConfig, ParameterVector, init_parameters


def random_params(input_dim, hidden_layers=2, width=8, seed=0, bias_scale=0.3):
    """He-initialized network with nonzero biases so every parameter matters."""
    config = NetworkConfig(input_dim, hidden_layers, width)
    params = init_parameters(config, seed)
    rng = np.random.default_rng(1000 + seed)
    data = params.data.copy()
    for _, (_, b0, end) in zip(config.shapes, params.offsets):
        data[b0:end] = bias_scale * rng.standard_normal(end - b0)
    return params.with_data(data)


def normwise_error(approx, exact):
    """max|approx - exact| / max|exact|, the max-norm relative error."""
    approx, exact = np.asarray(approx, float), np.asarray(exact, float)
    scale = np.max(np.abs(exact))
    return np.max(np.abs(approx - exact)) / (scale if scale > 0 else 1.0)


def fd_first(f, x, h):
    """Fourth-order central difference of f along every input axis, shape (N, d)."""
    cols = []
    for j in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[j] = h
        cols.append((-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h))
    return np.stack(cols, axis=1)


def fd_second(f, x, h):
    """Fourth-order central second difference along every input axis, shape (N, d)."""
    cols = []
    f0 = f(x)
    for j in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[j] = h
        cols.append((-f(x + 2 * e) + 16 * f(x + e) - 30 * f0 + 16 * f(x - e) - f(x - 2 * e))
                    / (12 * h * h))
    return np.stack(cols, axis=1)


def fd_gradient(fun, theta, h, order=2):
    """Central difference gradient of a scalar function of a flat vector."""
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        if order == 2:
            g[i] = (fun(theta + e) - fun(theta - e)) / (2 * h)
        else:
            g[i] = (-fun(theta + 2 * e) + 8 * fun(theta + e) - 8 * fun(theta - e)
                    + fun(theta - 2 * e)) / (12 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    """Store the verdict of an acceptance criterion for the end-of-run report."""
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
