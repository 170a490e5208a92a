"""Training strategies: vanilla, hard-only, easy-only, outlier filtering, and AEH.

A hard-phase step evaluates the weighted objective once and uses that
single evaluation for both the weight ascent and the Adam descent, so the
two updates see the same ``(theta, w)``.  An easy-phase step keeps the
lowest-loss fraction ``r`` of the samples (per group by default) and takes
one Adam step on the subset mean loss.  AEH runs ``s1`` hard steps then
``s2`` easy steps per epoch; ``r`` restarts at ``0.5 + 0.99/P`` every ``P``
epochs.

Step functions mutate the :class:`TrainerState` they are given and return
the :class:`~aehpinn.losses.Evaluation` taken before the update.
"""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import forward_value
from .exceptions import ConfigurationError, NumericFailureError
from .groups import GROUPS, AdaptiveWeights, GroupArrays
from .losses import (
    MASKS,
    aggregate_loss,
    mean_coefficients,
    outlier_stats,
    relative_l2,
    subset_coefficients,
    weight_gradient,
    weighted_coefficients,
)
from .network import AdamState, adam_step, ascent_step, init_parameters

KINDS = ("vanilla", "hard_only", "easy_only", "aapinn_lite", "aeh")
SCOPES = ("per_group", "global")


@dataclass(frozen=True)
class StrategySpec:
    kind: str = "aeh"
    s1: int = 10
    s2: int = 1
    period: int = 300
    mask: str = "identity"
    outlier_k: float = 3.0
    outlier_check_every: int = 100
    selection_scope: str = "per_group"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"strategy kind must be one of {KINDS}, got {self.kind!r}")
        for name in ("s1", "s2", "period", "outlier_check_every"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigurationError(f"strategy.{name} must be an integer >= 1, got {v!r}")
        if self.mask not in MASKS:
            raise ConfigurationError(f"strategy.mask must be one of {MASKS}, got {self.mask!r}")
        if self.selection_scope not in SCOPES:
            raise ConfigurationError(
                f"strategy.selection_scope must be one of {SCOPES}, got {self.selection_scope!r}")
        if not self.outlier_k >= 0:
            raise ConfigurationError(f"strategy.outlier_k must be >= 0, got {self.outlier_k}")


def selection_ratio(cycle, period):
    """Fraction of easiest samples kept at position ``cycle`` (1-based) of a period."""
    if not 1 <= cycle <= period:
        raise ConfigurationError(f"cycle must lie in [1, {period}], got {cycle}")
    return min(0.5 + 0.99 * cycle / period, 1.0)


def cycle_of(epoch, period):
    return (epoch - 1) % period + 1


@dataclass
class ScheduleState:
    period: int = 300
    epoch: int = 1
    cycle: int = 1
    ratio: float = None
    log_phases: bool = True
    phase_log: list = field(default_factory=list)

    def __post_init__(self):
        self.set_epoch(self.epoch)

    def set_epoch(self, epoch):
        self.epoch = epoch
        self.cycle = cycle_of(epoch, self.period)
        self.ratio = selection_ratio(self.cycle, self.period)

    def record(self, phase, inner_step, ratio=None):
        if self.log_phases:
            self.phase_log.append((self.epoch, phase, inner_step, ratio))

    def copy(self):
        return replace(self, phase_log=list(self.phase_log))


@dataclass
class TrainerState:
    params: object
    adam: AdamState
    weights: AdaptiveWeights
    schedule: ScheduleState
    rng: np.random.Generator
    excluded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    elapsed_s: float = 0.0

    @property
    def epoch(self):
        """Number of completed epochs."""
        return self.schedule.epoch - 1

    def snapshot(self):
        return replace(self, schedule=self.schedule.copy(), rng=_clone_rng(self.rng),
                       excluded=self.excluded.copy())


def _clone_rng(rng):
    new = np.random.Generator(type(rng.bit_generator)())
    new.bit_generator.state = rng.bit_generator.state
    return new


def init_state(net_config, counts, seed, period=300, log_phases=True):
    params = init_parameters(net_config, seed)
    return TrainerState(
        params=params,
        adam=AdamState.zeros(len(params), dtype=params.data.dtype),
        weights=AdaptiveWeights.ones(counts),
        schedule=ScheduleState(period=period, log_phases=log_phases),
        rng=np.random.default_rng(seed),
    )


def _k_of(ratio, n):
    # guard against 0.83*100 = 83.00000000000001 style rounding
    return max(1, math.ceil(round(ratio * n, 9))) if n else 0


def select_easy_subset(losses, ratio, scope="per_group"):
    """Indices (ascending) of the lowest-loss samples, per group.

    Ties are broken by sample index.  ``per_group`` keeps
    ``ceil(ratio * N_group)`` samples of every nonempty group; ``global``
    keeps ``ceil(ratio * N)`` samples of the pooled set.
    """
    if not 0 < ratio <= 1:
        raise ConfigurationError(f"ratio must lie in (0, 1], got {ratio}")
    if sum(losses.counts) == 0:
        raise ConfigurationError("cannot select from an empty loss list")
    if scope == "per_group":
        out = []
        for arr in losses:
            k = _k_of(ratio, len(arr))
            out.append(np.sort(np.argsort(arr, kind="stable")[:k]))
        return GroupArrays(*out)
    if scope == "global":
        flat = losses.concat()
        keep = np.zeros(flat.size, dtype=bool)
        keep[np.argsort(flat, kind="stable")[:_k_of(ratio, flat.size)]] = True
        return GroupArrays(*(np.flatnonzero(m) for m in GroupArrays.split(keep, losses.counts)))
    raise ConfigurationError(f"selection scope must be one of {SCOPES}, got {scope!r}")


def _descend(state, ev, coef, opt):
    _, grad = ev.gradient(coef)
    state.adam, state.params = adam_step(state.adam, state.params, grad, opt)


def hard_phase_step(state, batch, opt, mask="identity", inner_step=1):
    """Simultaneous weight ascent and parameter descent on the weighted loss."""
    ev = batch.evaluate(state.params)
    counts = batch.counts
    coef = weighted_coefficients(state.weights, counts, mask)
    w_grad = weight_gradient(ev.losses, state.weights, counts, mask)
    _descend(state, ev, coef, opt)
    state.weights = ascent_step(state.weights, w_grad, opt.ascent_lr)
    state.schedule.record("hard", inner_step)
    return ev


def easy_phase_step(state, batch, opt, scope="per_group", inner_step=1):
    """One Adam step on the mean loss of the easiest ``ratio`` fraction."""
    ev = batch.evaluate(state.params)
    ratio = state.schedule.ratio
    selection = select_easy_subset(ev.losses, ratio, scope)
    _descend(state, ev, subset_coefficients(selection, batch.counts), opt)
    state.schedule.record("easy", inner_step, ratio)
    return ev


def full_step(state, batch, opt):
    """Plain full-batch step on the standard composite loss."""
    ev = batch.evaluate(state.params)
    _descend(state, ev, mean_coefficients(batch.counts), opt)
    state.schedule.record("full", 1)
    return ev


def _finish_epoch(state):
    state.schedule.set_epoch(state.schedule.epoch + 1)


def train_epoch_aeh(state, batch, opt, spec):
    if spec.kind != "aeh":
        raise ConfigurationError("train_epoch_aeh requires strategy kind 'aeh'")
    first = None
    for s in range(1, spec.s1 + 1):
        ev = hard_phase_step(state, batch, opt, spec.mask, s)
        first = first or ev
    state.schedule.set_epoch(state.schedule.epoch)
    for s in range(1, spec.s2 + 1):
        easy_phase_step(state, batch, opt, spec.selection_scope, s)
    _finish_epoch(state)
    return first


def _aapinn_step(state, batch, opt, spec):
    ev = batch.evaluate(state.params)
    if (state.schedule.epoch - 1) % spec.outlier_check_every == 0:
        _, state.excluded = outlier_stats(ev.losses, spec.outlier_k)
    if state.excluded.size == 0:
        coef = mean_coefficients(batch.counts)
        phase = "full"
    else:
        keep = np.ones(sum(batch.counts), dtype=bool)
        keep[state.excluded] = False
        selection = GroupArrays(*(np.flatnonzero(m) for m in GroupArrays.split(keep, batch.counts)))
        coef = subset_coefficients(selection, batch.counts)
        phase = "filtered"
    _descend(state, ev, coef, opt)
    state.schedule.record(phase, 1)
    return ev


def train_epoch_baseline(state, batch, opt, spec):
    kind = spec.kind
    if kind == "vanilla":
        first = full_step(state, batch, opt)
    elif kind == "hard_only":
        first = None
        for s in range(1, spec.s1 + 1):
            ev = hard_phase_step(state, batch, opt, spec.mask, s)
            first = first or ev
    elif kind == "easy_only":
        first = None
        for s in range(1, spec.s2 + 1):
            ev = easy_phase_step(state, batch, opt, spec.selection_scope, s)
            first = first or ev
    elif kind == "aapinn_lite":
        first = _aapinn_step(state, batch, opt, spec)
    else:
        raise ConfigurationError(f"{kind!r} is not a baseline strategy")
    _finish_epoch(state)
    return first


def train_epoch(state, batch, opt, spec):
    if spec.kind == "aeh":
        return train_epoch_aeh(state, batch, opt, spec)
    return train_epoch_baseline(state, batch, opt, spec)


PHASE_LABELS = {"vanilla": "full", "hard_only": "hard", "easy_only": "easy",
                "aapinn_lite": "full", "aeh": "alternating"}


@dataclass
class MetricsRecord:
    """One row of the training log.

    Loss columns hold the unweighted composite loss at the parameters the
    epoch started from; ``rel_l2`` is measured after the epoch's updates.
    """

    epoch: int
    phase: str
    loss_total: float
    loss_r: float
    loss_i: float
    loss_b: float
    rel_l2: float = None
    wall_time_s: float = 0.0


def evaluate_rel_l2(params, grid):
    return relative_l2(forward_value(params, grid.points), grid.values)


def train(batch, net_config, opt, spec, max_epochs, seed=0, eval_every=100, grid=None,
          state=None, on_record=None, log_phases=True):
    """Run epochs until ``max_epochs`` have completed in total.

    Returns ``(state, records)``.  A fresh run emits an epoch-0 record;
    a resumed run (``state`` given) continues from ``state.epoch``.
    ``on_record`` is called with every record as soon as it exists.  On a
    numeric failure the raised error carries ``last_good_state``.
    """
    records = []

    def emit(rec):
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    start = time.perf_counter()
    if state is None:
        state = init_state(net_config, batch.counts, seed, spec.period, log_phases)
        try:
            ev = batch.evaluate(state.params)
            rel = evaluate_rel_l2(state.params, grid) if grid is not None else None
        except NumericFailureError as exc:
            exc.context["epoch"] = 0
            exc.last_good_state = state.snapshot()
            raise
        lb = aggregate_loss(ev.losses)
        emit(MetricsRecord(0, "init", lb.total, lb.l_residual, lb.l_initial, lb.l_boundary,
                           rel, state.elapsed_s))
    base = state.elapsed_s
    while state.epoch < max_epochs:
        good = state.snapshot()
        epoch = state.epoch + 1
        try:
            ev = train_epoch(state, batch, opt, spec)
            rel = None
            if grid is not None and (epoch % eval_every == 0 or epoch == max_epochs):
                rel = evaluate_rel_l2(state.params, grid)
                if not math.isfinite(rel):
                    raise NumericFailureError("non-finite relative L2 error")
        except NumericFailureError as exc:
            exc.context["epoch"] = epoch
            exc.last_good_state = good
            raise
        state.elapsed_s = base + time.perf_counter() - start
        lb = aggregate_loss(ev.losses)
        phase = PHASE_LABELS[spec.kind]
        if spec.kind == "aapinn_lite" and state.excluded.size:
            phase = "filtered"
        emit(MetricsRecord(epoch, phase, lb.total, lb.l_residual, lb.l_initial, lb.l_boundary,
                           rel, state.elapsed_s))
    return state, records
