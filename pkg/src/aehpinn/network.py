"""MLP architecture, He initialization, Adam descent and plain weight ascent."""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, NumericFailureError
from .groups import GROUPS

DTYPES = {"double": np.float64, "single": np.float32}


@dataclass(frozen=True)
class NetworkConfig:
    """Fully connected Tanh network with a scalar linear output.

    Parameters
    ----------
    input_dim : int
        Number of network inputs (spatial coordinates, plus time when present).
    hidden_layers : int, default=4
    width : int, default=50
    activation : {'tanh'}
    init : {'he'}
    precision : {'double', 'single'}
    """

    input_dim: int
    hidden_layers: int = 4
    width: int = 50
    activation: str = "tanh"
    init: str = "he"
    precision: str = "double"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ConfigurationError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.hidden_layers < 0:
            raise ConfigurationError(f"hidden_layers must be >= 0, got {self.hidden_layers}")
        if self.width < 1:
            raise ConfigurationError(f"width must be >= 1, got {self.width}")
        if self.activation != "tanh":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")
        if self.init != "he":
            raise ConfigurationError(f"unsupported init {self.init!r}")
        if self.precision not in DTYPES:
            raise ConfigurationError(
                f"precision must be one of {sorted(DTYPES)}, got {self.precision!r}")

    @property
    def dtype(self):
        return DTYPES[self.precision]

    @property
    def layer_sizes(self):
        return [self.input_dim] + [self.width] * self.hidden_layers + [1]

    @property
    def shapes(self):
        sizes = self.layer_sizes
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def n_params(self):
        return parameter_count(self)

    @property
    def n_weights(self):
        """Number of multiplicative weights (biases excluded)."""
        return sum(i * o for i, o in self.shapes)


def parameter_count(config):
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in config.shapes)


class ParameterVector:
    """Flat parameter storage with per-layer offsets.

    Layer ``l`` occupies ``fan_in*fan_out`` weights (row-major, shape
    ``(fan_in, fan_out)``) followed by ``fan_out`` biases.  ``layers()``
    returns views into the flat array, so the affine map is ``x @ W + b``.
    """

    def __init__(self, config, data=None):
        self.config = config
        n = parameter_count(config)
        if data is None:
            data = np.zeros(n, dtype=config.dtype)
        data = np.asarray(data)
        if data.shape != (n,):
            raise ConfigurationError(
                f"parameter vector has shape {data.shape}, config needs ({n},)")
        self.data = data.astype(config.dtype, copy=False)
        offsets, pos = [], 0
        for fan_in, fan_out in config.shapes:
            offsets.append((pos, pos + fan_in * fan_out, pos + fan_in * fan_out + fan_out))
            pos += fan_in * fan_out + fan_out
        self.offsets = offsets

    def __len__(self):
        return self.data.size

    def __repr__(self):
        return f"ParameterVector(n={self.data.size}, sizes={self.config.layer_sizes})"

    def layers(self, data=None):
        data = self.data if data is None else data
        out = []
        for (fan_in, fan_out), (w0, b0, end) in zip(self.config.shapes, self.offsets):
            out.append((data[w0:b0].reshape(fan_in, fan_out), data[b0:end]))
        return out

    def with_data(self, data):
        return ParameterVector(self.config, data)

    def copy(self):
        return ParameterVector(self.config, self.data.copy())


def init_parameters(config, seed):
    """He-normal weights (std ``sqrt(2/fan_in)``) and zero biases."""
    rng = np.random.default_rng(seed)
    params = ParameterVector(config, np.zeros(parameter_count(config), dtype=np.float64))
    data = params.data
    for (fan_in, fan_out), (w0, b0, _) in zip(config.shapes, params.offsets):
        data[w0:b0] = rng.standard_normal(fan_in * fan_out) * np.sqrt(2.0 / fan_in)
    return ParameterVector(config, data.astype(config.dtype))


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ascent_lr: float = 1e-3

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigurationError(f"lr must be >= 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {b}")
        if not self.eps > 0:
            raise ConfigurationError(f"eps must be > 0, got {self.eps}")
        if not self.ascent_lr >= 0:
            raise ConfigurationError(f"ascent_lr must be >= 0, got {self.ascent_lr}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, n, dtype=np.float64):
        return cls(np.zeros(n, dtype=dtype), np.zeros(n, dtype=dtype), 0)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.step_count)


def adam_step(state, params, grad, opt):
    """One bias-corrected Adam update; returns ``(new_state, new_params)``.

    ``lr == 0`` leaves the parameters bit-identical.
    """
    g = np.asarray(grad)
    if g.shape != params.data.shape or state.m.shape != g.shape:
        raise ConfigurationError("gradient, moment and parameter lengths differ")
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise NumericFailureError("non-finite gradient entry", index=int(bad[0]))
    t = state.step_count + 1
    m = opt.beta1 * state.m + (1.0 - opt.beta1) * g
    v = opt.beta2 * state.v + (1.0 - opt.beta2) * (g * g)
    if opt.lr == 0:
        return AdamState(m, v, t), params.copy()
    m_hat = m / (1.0 - opt.beta1 ** t)
    v_hat = v / (1.0 - opt.beta2 ** t)
    data = params.data - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return AdamState(m, v, t), params.with_data(data.astype(params.data.dtype, copy=False))


def ascent_step(weights, weight_grad, ascent_lr):
    """Plain gradient ascent ``w <- w + ascent_lr * dL/dw`` on every group."""
    new = []
    for name, w, g in zip(GROUPS, weights, weight_grad):
        g = np.asarray(g)
        if w.shape != g.shape:
            raise ConfigurationError(
                f"{name} weights have shape {w.shape}, gradient {g.shape}")
        bad = np.flatnonzero(~np.isfinite(g))
        if bad.size:
            raise NumericFailureError("non-finite weight gradient", index=int(bad[0]), group=name)
        new.append(w + ascent_lr * g)
    return type(weights)(*new)
