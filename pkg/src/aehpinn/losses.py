"""Per-sample losses, the standard/weighted/subset objectives, and metrics.

Per-sample losses are the raw squared residuals (no ``1/N`` factor); group
normalization happens only when they are aggregated.  Every objective is a
coefficient-weighted sum ``sum_i c_i * loss_i``, so the standard loss, the
hard-phase weighted loss and the easy-phase subset loss differ only in the
coefficient arrays handed to :meth:`Evaluation.gradient`.
"""

from dataclasses import dataclass

import numpy as np

from . import problems as P
from .autodiff import JetValue, linearize
from .exceptions import ConfigurationError, NumericFailureError
from .groups import GROUPS, AdaptiveWeights, GroupArrays

MASKS = ("identity", "square")


@dataclass(frozen=True)
class PerSampleLoss:
    group: str
    index: int
    value: float


@dataclass(frozen=True)
class LossBreakdown:
    l_residual: float
    l_initial: float
    l_boundary: float
    total: float


@dataclass(frozen=True)
class OutlierStats:
    mean: float
    std: float
    threshold_k: float

    @property
    def threshold(self):
        return self.mean + self.threshold_k * self.std


def as_records(losses):
    """Expand group arrays into a flat list of :class:`PerSampleLoss`."""
    return [PerSampleLoss(g, i, float(v)) for g, arr in losses.items() for i, v in enumerate(arr)]


class CollocationBatch:
    """A sample set bound to its problem, with the fixed data precomputed.

    Source terms and initial/boundary data do not depend on the network,
    so they are evaluated once here.
    """

    def __init__(self, problem, sample_set):
        self.problem = problem
        self.sample_set = sample_set
        self.counts = sample_set.counts
        self.points = sample_set.all_points()
        n_r, n_i, n_b = self.counts
        self.source = P.source_term(problem, sample_set.residual) if n_r else np.zeros(0)
        self.initial_data = P.initial_data(problem, sample_set.initial) if n_i else np.zeros(0)
        self.boundary_data = (P.boundary_data(problem, sample_set.boundary, sample_set.boundary_tags)
                              if n_b else np.zeros(0))

    def evaluate(self, params):
        return Evaluation(self, params)


class Evaluation:
    """Network jet at every collocation point, residuals, and a pullback."""

    def __init__(self, batch, params):
        self.batch = batch
        n_r, n_i, n_b = batch.counts
        self.jet, self._pullback = linearize(params, batch.points)
        jr = self.jet[:n_r]
        r_res, self._partials = P.pde_residual_with_partials(
            batch.problem, jr, batch.sample_set.residual, batch.source)
        u = self.jet.value
        r_init = u[n_r:n_r + n_i] - batch.initial_data
        r_bnd = u[n_r + n_i:] - batch.boundary_data
        self.residuals = GroupArrays(r_res, r_init, r_bnd)
        self.losses = GroupArrays(r_res * r_res, r_init * r_init, r_bnd * r_bnd)
        for name, arr in self.losses.items():
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise NumericFailureError("non-finite per-sample loss", index=int(bad[0]), group=name)

    def objective(self, coef):
        """``sum_i c_i * loss_i`` summed group by group in fixed order."""
        total = 0.0
        for c, l in zip(coef, self.losses):
            total += float(np.dot(c, l)) if len(l) else 0.0
        return total

    def gradient(self, coef):
        """Objective value and its exact gradient w.r.t. the flat parameters."""
        n_r = self.batch.counts[0]
        r = self.residuals
        seed_r = 2.0 * coef.residual * r.residual
        du = np.concatenate([seed_r * self._partials.value,
                             2.0 * coef.initial * r.initial,
                             2.0 * coef.boundary * r.boundary])
        d = self.jet.dim
        dg = np.zeros((len(du), d))
        dh = np.zeros((len(du), d))
        dg[:n_r] = seed_r[:, None] * self._partials.input_grad
        dh[:n_r] = seed_r[:, None] * self._partials.input_diag_hess
        return self.objective(coef), self._pullback(JetValue(du, dg, dh))


def per_sample_losses(params, sample_set, problem):
    """Unweighted squared residual per sample, grouped."""
    return CollocationBatch(problem, sample_set).evaluate(params).losses


def _counts(losses, counts):
    counts = losses.counts if counts is None else tuple(counts)
    for name, arr, n in zip(GROUPS, losses, counts):
        if n == 0 and len(arr):
            raise ConfigurationError(f"{name} group has losses but a count of zero")
    return counts


def mean_coefficients(counts, dtype=np.float64):
    """Coefficients of the standard loss: ``1/N_group`` for every sample."""
    return GroupArrays(*(np.full(n, 1.0 / n, dtype=dtype) if n else np.zeros(0) for n in counts))


def aggregate_loss(losses, counts=None):
    """Group means summed into the standard composite loss."""
    counts = _counts(losses, counts)
    parts = [float(np.sum(arr)) / n if n else 0.0 for arr, n in zip(losses, counts)]
    return LossBreakdown(parts[0], parts[1], parts[2], parts[0] + parts[1] + parts[2])


def _mask(weights, mask):
    if mask == "identity":
        return weights, weights.map(np.ones_like)
    if mask == "square":
        return weights.map(np.square), weights.map(lambda w: 2.0 * w)
    raise ConfigurationError(f"unknown mask {mask!r}; expected one of {MASKS}")


def weighted_coefficients(weights, counts=None, mask="identity"):
    counts = weights.counts if counts is None else tuple(counts)
    masked, _ = _mask(weights, mask)
    return GroupArrays(*(m * (1.0 / n) if n else m for m, n in zip(masked, counts)))


def weighted_objective(losses, weights, counts=None, mask="identity"):
    """Hard-phase objective ``sum_g (1/N_g) sum_i m(w_i) loss_i``."""
    if weights.counts != losses.counts:
        raise ConfigurationError(
            f"weights sized {weights.counts} but losses sized {losses.counts}")
    counts = _counts(losses, counts)
    coef = weighted_coefficients(weights, counts, mask)
    return sum(float(np.dot(c, l)) if len(l) else 0.0 for c, l in zip(coef, losses))


def weight_gradient(losses, weights, counts=None, mask="identity"):
    """``dL/dw_i = m'(w_i) * loss_i / N_group`` for every sample."""
    if weights.counts != losses.counts:
        raise ConfigurationError(
            f"weights sized {weights.counts} but losses sized {losses.counts}")
    counts = _counts(losses, counts)
    _, dmask = _mask(weights, mask)
    return AdaptiveWeights(*(dm * l / n if n else np.zeros(0)
                             for dm, l, n in zip(dmask, losses, counts)))


def subset_coefficients(selection, counts, dtype=np.float64):
    """Mean-over-subset coefficients: ``1/|S_g|`` on selected samples, 0 elsewhere."""
    out = []
    for idx, n in zip(selection, counts):
        c = np.zeros(n, dtype=dtype)
        if len(idx):
            c[np.asarray(idx)] = 1.0 / len(idx)
        out.append(c)
    return GroupArrays(*out)


def outlier_stats(losses, threshold_k=3.0):
    """Pooled mean and unbiased std of the per-sample losses, plus anomalies.

    ``losses`` is a :class:`GroupArrays` or a flat array.  Anomaly indices
    refer to the pooled (residual, initial, boundary) order.
    """
    flat = losses.concat() if isinstance(losses, GroupArrays) else np.asarray(losses, float)
    if flat.size < 2:
        raise ConfigurationError("outlier statistics need at least 2 samples")
    if np.all(flat == flat[0]):
        # exact degenerate case; np.mean can be off by an ulp here
        mean, std = float(flat[0]), 0.0
    else:
        mean = float(np.mean(flat))
        std = float(np.std(flat, ddof=1))
    stats = OutlierStats(mean, std, float(threshold_k))
    return stats, np.flatnonzero(flat > stats.threshold)


def relative_l2(predictions, exact):
    pred = np.asarray(predictions, dtype=float).ravel()
    ref = np.asarray(exact, dtype=float).ravel()
    if pred.shape != ref.shape or pred.size == 0:
        raise ConfigurationError("predictions and exact values must be equal, nonzero length")
    denom = np.sqrt(np.sum(ref**2))
    if denom == 0:
        raise ConfigurationError("relative L2 error undefined for an all-zero reference")
    return float(np.sqrt(np.sum((pred - ref) ** 2)) / denom)
