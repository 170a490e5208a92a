"""Network evaluation with input derivatives, and exact parameter gradients.

The network output is propagated together with its input gradient and the
diagonal of its input Hessian (a "jet").  All layers act on a batch of
points at once.  Derivative channels are stored stacked as an array of
shape ``(2*d, N, width)``: the first ``d`` slices are first derivatives,
the last ``d`` are pure second derivatives.

Parameter gradients are obtained by a hand-written reverse pass over the
jet channels (``linearize`` returns the pullback).  Any scalar objective
assembled from jet entries can be differentiated by supplying its
cotangent with respect to the jet.
"""

from dataclasses import dataclass

import numba
import numpy as np

from .exceptions import ConfigurationError, NumericFailureError


@dataclass(frozen=True)
class JetValue:
    """Network value with first and pure second input derivatives.

    For a batch of ``N`` points in ``d`` dimensions ``value`` has shape
    ``(N,)`` and the derivative arrays ``(N, d)``.  Single points use
    shapes ``()`` and ``(d,)``.
    """

    value: np.ndarray
    input_grad: np.ndarray
    input_diag_hess: np.ndarray

    @property
    def dim(self):
        return self.input_grad.shape[-1]

    def __getitem__(self, idx):
        return JetValue(self.value[idx], self.input_grad[idx], self.input_diag_hess[idx])


@numba.njit(cache=True)
def _tanh_jet(s, zd, out, s1, s2):
    # out[0] = s; out[1+j] = s1*zg_j; out[1+d+j] = s2*zg_j**2 + s1*zh_j
    d = zd.shape[0] // 2
    m = s.size
    sf, s1f, s2f = s.reshape(m), s1.reshape(m), s2.reshape(m)
    zf = zd.reshape(2 * d, m)
    of = out.reshape(1 + 2 * d, m)
    for i in range(m):
        t = sf[i]
        a = 1 - t * t
        s1f[i] = a
        s2f[i] = -2 * t * a
        of[0, i] = t
    for j in range(d):
        for i in range(m):
            g = zf[j, i]
            of[1 + j, i] = s1f[i] * g
            of[1 + d + j, i] = s2f[i] * g * g + s1f[i] * zf[d + j, i]


@numba.njit(cache=True)
def _tanh_jet_adjoint(adj, s, s1, s2, zd, zadj):
    d = zd.shape[0] // 2
    m = s.size
    sf, s1f, s2f = s.reshape(m), s1.reshape(m), s2.reshape(m)
    zf = zd.reshape(2 * d, m)
    af = adj.reshape(1 + 2 * d, m)
    of = zadj.reshape(1 + 2 * d, m)
    # accumulate d(loss)/d(s1) and d(loss)/d(s2) in of[0] and a scratch row
    acc = np.zeros(m, dtype=s.dtype)
    for i in range(m):
        of[0, i] = 0
    for j in range(d):
        for i in range(m):
            gb = af[1 + j, i]
            hb = af[1 + d + j, i]
            g = zf[j, i]
            a = s1f[i]
            of[1 + d + j, i] = a * hb
            of[1 + j, i] = a * gb + 2 * s2f[i] * g * hb
            of[0, i] += gb * g + hb * zf[d + j, i]
            acc[i] += hb * g * g
    for i in range(m):
        t = sf[i]
        a = s1f[i]
        db = -2 * a * (a - 2 * t * t)
        of[0, i] = af[0, i] * a + of[0, i] * s2f[i] + acc[i] * db


def _as_batch(params, x):
    x = np.asarray(x, dtype=params.config.dtype)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.ndim != 2 or X.shape[1] != params.config.input_dim:
        raise ConfigurationError(
            f"input of shape {x.shape} does not match input_dim={params.config.input_dim}")
    return X, single


def forward_value(params, x):
    """Plain forward pass ``u(x)``; ``x`` is one point ``(d,)`` or a batch ``(N, d)``."""
    X, single = _as_batch(params, x)
    layers = params.layers()
    a = X
    for W, b in layers[:-1]:
        a = np.tanh(a @ W + b)
    W, b = layers[-1]
    u = (a @ W + b)[:, 0]
    return u[0] if single else u


def _forward(params, X):
    n, d = X.shape
    dtype = X.dtype
    # stacked layer input: channel 0 = value, 1..d = grads, d+1..2d = diag hess
    inp = np.zeros((1 + 2 * d, n, d), dtype=dtype)
    inp[0] = X
    for j in range(d):
        inp[1 + j, :, j] = 1.0
    tape = []
    layers = params.layers()
    for W, b in layers[:-1]:
        width = W.shape[1]
        z = inp[0] @ W + b
        zd = (inp[1:].reshape(-1, W.shape[0]) @ W).reshape(2 * d, n, width)
        s = np.tanh(z)
        s1 = np.empty_like(s)
        s2 = np.empty_like(s)
        out = np.empty((1 + 2 * d, n, width), dtype=dtype)
        _tanh_jet(s, zd, out, s1, s2)
        tape.append((inp, s, s1, s2, zd))
        inp = out
    W, b = layers[-1]
    u = (inp[0] @ W + b)[:, 0]
    du = (inp[1:].reshape(-1, W.shape[0]) @ W).reshape(2 * d, n)
    tape.append((inp,))
    jet = JetValue(u, du[:d].T.copy(), du[d:].T.copy())
    return jet, tape


def _backward(params, tape, cot):
    d = cot.input_grad.shape[1]
    n = cot.value.shape[0]
    layers = params.layers()
    grad = np.zeros_like(params.data)
    glayers = params.layers(grad)

    # output layer (linear)
    (inp,) = tape[-1]
    W, _ = layers[-1]
    gW, gb = glayers[-1]
    seed = np.empty((1 + 2 * d, n), dtype=grad.dtype)
    seed[0] = cot.value
    seed[1:1 + d] = cot.input_grad.T
    seed[1 + d:] = cot.input_diag_hess.T
    gW[:, 0] = inp.reshape(-1, W.shape[0]).T @ seed.reshape(-1)
    gb[0] = seed[0].sum()
    adj = seed[:, :, None] * W[:, 0]

    for li in range(len(layers) - 2, -1, -1):
        inp, s, s1, s2, zd = tape[li]
        W, _ = layers[li]
        gW, gb = glayers[li]
        zadj = np.empty_like(adj)
        _tanh_jet_adjoint(adj, s, s1, s2, zd, zadj)
        width = W.shape[1]
        flat_adj = zadj.reshape(-1, width)
        gW[...] = inp.reshape(-1, W.shape[0]).T @ flat_adj
        gb[...] = zadj[0].sum(axis=0)
        if li > 0:
            adj = (flat_adj @ W.T).reshape(1 + 2 * d, n, W.shape[0])
    return grad


def _check_finite(jet):
    bad = ~np.isfinite(jet.value)
    bad |= ~np.all(np.isfinite(jet.input_grad), axis=-1)
    bad |= ~np.all(np.isfinite(jet.input_diag_hess), axis=-1)
    idx = np.flatnonzero(bad)
    if idx.size:
        raise NumericFailureError("non-finite network output", index=int(idx[0]))


def forward_jet(params, x):
    """Value, input gradient and diagonal input Hessian at ``x``."""
    X, single = _as_batch(params, x)
    jet, _ = _forward(params, X)
    return jet[0] if single else jet


def linearize(params, x):
    """Forward jet over a batch plus its pullback.

    Returns ``(jet, pullback)`` where ``pullback(cotangent)`` maps a
    :class:`JetValue` of cotangents (same shapes as ``jet``) to the flat
    gradient with respect to ``params.data``.
    """
    X, _ = _as_batch(params, x)
    jet, tape = _forward(params, X)
    _check_finite(jet)

    def pullback(cotangent):
        if cotangent.value.shape != jet.value.shape or \
                cotangent.input_grad.shape != jet.input_grad.shape:
            raise ConfigurationError("cotangent shapes do not match the jet")
        return _backward(params, tape, cotangent)

    return jet, pullback


def parameter_gradient(params, x, objective):
    """Exact gradient of a scalar objective of the jet at points ``x``.

    ``objective(jet)`` must return ``(loss, cotangent)`` with ``cotangent``
    the derivative of ``loss`` with respect to every jet entry.  Returns
    ``(loss, grad)``.
    """
    X, _ = _as_batch(params, x)
    if X.shape[0] == 0:
        loss, _ = objective(JetValue(np.zeros(0), np.zeros((0, X.shape[1])),
                                     np.zeros((0, X.shape[1]))))
        return loss, np.zeros_like(params.data)
    jet, pullback = linearize(params, X)
    loss, cot = objective(jet)
    return loss, pullback(cot)
