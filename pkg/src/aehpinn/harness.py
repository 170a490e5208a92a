"""Experiment harness: config files, multi-seed runs, sweeps, outputs, checkpoints.

Config files are plain text, one ``key = value`` per line, with dotted
section prefixes (``strategy.s1 = 50``) or ``[section]`` headers.  A bare
``problem = heat_steep`` names the problem.  Unknown keys are rejected.

Output layout of :func:`run_experiment`::

    OUT/summary.txt
    OUT/seed_<s>/metrics.csv
    OUT/seed_<s>/prediction.csv
    OUT/seed_<s>/checkpoint.npz
"""

import ast
import csv
import dataclasses
import hashlib
import io
import itertools
import json
import logging
import os
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import forward_value
from .exceptions import CheckpointError, ConfigurationError, NumericFailureError
from .groups import AdaptiveWeights
from .losses import CollocationBatch, relative_l2
from .network import AdamState, NetworkConfig, OptimizerConfig, ParameterVector
from .problems import DEFAULT_COUNTS, PROBLEMS, build_problem, sample_training_set, test_grid
from .strategies import ScheduleState, StrategySpec, TrainerState, train

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
METRICS_HEADER = ["epoch", "phase", "loss_total", "loss_r", "loss_i", "loss_b", "rel_l2",
                  "wall_time_s"]


@dataclass(frozen=True)
class ProblemBlock:
    name: str = "heat_steep"
    params: dict = field(default_factory=dict)
    reference: str = None


@dataclass(frozen=True)
class SamplingBlock:
    n_r: int = None
    n_i: int = None
    n_b: int = None
    seed: int = None

    def counts(self, problem_name):
        defaults = DEFAULT_COUNTS[problem_name]
        return tuple(d if v is None else v for v, d in zip((self.n_r, self.n_i, self.n_b), defaults))


@dataclass(frozen=True)
class NetworkBlock:
    hidden_layers: int = 4
    width: int = 50
    activation: str = "tanh"
    init: str = "he"


@dataclass(frozen=True)
class RunBlock:
    max_epochs: int = 100000
    eval_every: int = 100
    seeds: tuple = tuple(range(10))
    output_dir: str = "runs"
    precision: str = "double"
    log_wall_time: bool = False


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemBlock = ProblemBlock()
    sampling: SamplingBlock = SamplingBlock()
    network: NetworkBlock = NetworkBlock()
    optimizer: OptimizerConfig = OptimizerConfig()
    strategy: StrategySpec = StrategySpec()
    run: RunBlock = RunBlock()

    def network_config(self, input_dim):
        n = self.network
        return NetworkConfig(input_dim, n.hidden_layers, n.width, n.activation, n.init,
                             self.run.precision)

    def to_dict(self):
        return dataclasses.asdict(self)

    def training_dict(self):
        """Fields that determine the training trajectory of a seed."""
        d = self.to_dict()
        run = d.pop("run")
        d["precision"] = run["precision"]
        d["problem"].pop("reference")
        return d

    def config_hash(self):
        blob = json.dumps(self.training_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, overrides):
        """New config with dotted-key overrides applied (validated)."""
        flat = flatten_config(self)
        for key, value in overrides.items():
            _check_key(key, flat)
            flat[key] = value
        return config_from_flat(flat)


_SECTIONS = {
    "sampling": SamplingBlock,
    "network": NetworkBlock,
    "optimizer": OptimizerConfig,
    "strategy": StrategySpec,
    "run": RunBlock,
}
_INT_FIELDS = {"n_r", "n_i", "n_b", "seed", "hidden_layers", "width", "max_epochs",
               "eval_every", "s1", "s2", "period", "outlier_check_every"}


def _coerce(key, value):
    section, _, name = key.partition(".")
    if key == "run.seeds":
        if isinstance(value, (int, np.integer)):
            value = [value]
        elif isinstance(value, str):
            value = [v for v in value.replace(",", " ").split()]
        seeds = tuple(int(v) for v in value)
        if not seeds:
            raise ConfigurationError("run.seeds must be nonempty")
        return seeds
    if name in _INT_FIELDS:
        if value is None:
            return None
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
            raise ConfigurationError(f"{key} must be an integer, got {value!r}")
        if name in ("n_r", "n_i", "n_b") and value < 0:
            raise ConfigurationError(f"{key} must be >= 0, got {value}")
        if name in ("max_epochs",) and value < 0:
            raise ConfigurationError(f"{key} must be >= 0, got {value}")
        if name == "hidden_layers" and value < 0:
            raise ConfigurationError(f"{key} must be >= 0, got {value}")
        if name in ("eval_every", "width") and value < 1:
            raise ConfigurationError(f"{key} must be >= 1, got {value}")
        return int(value)
    if key == "run.log_wall_time":
        if isinstance(value, str):
            value = value.lower() in ("1", "true", "yes", "on")
        return bool(value)
    if section in ("optimizer",) or name == "outlier_k":
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigurationError(f"{key} must be a number, got {value!r}") from None
    return value


def flatten_config(config):
    flat = {"problem.name": config.problem.name}
    for k, v in config.problem.params.items():
        flat[f"problem.{k}"] = v
    if config.problem.reference is not None:
        flat["problem.reference"] = config.problem.reference
    for section in _SECTIONS:
        for k, v in dataclasses.asdict(getattr(config, section)).items():
            flat[f"{section}.{k}"] = v
    return flat


def _check_key(key, flat=None):
    section, dot, name = key.partition(".")
    if section == "problem" and dot:
        return
    if section in _SECTIONS and name in {f.name for f in dataclasses.fields(_SECTIONS[section])}:
        return
    if key == "network.precision":
        return
    raise ConfigurationError(f"unknown config key {key!r}")


def config_from_flat(flat):
    """Build a validated :class:`RunConfig` from ``{'section.key': value}``."""
    flat = dict(flat)
    if "problem" in flat:
        flat["problem.name"] = flat.pop("problem")
    name = flat.pop("problem.name", "heat_steep")
    if name not in PROBLEMS:
        raise ConfigurationError(f"unknown problem {name!r}; expected one of {PROBLEMS}")
    reference = flat.pop("problem.reference", None)
    params = {}
    for key in [k for k in flat if k.startswith("problem.")]:
        params[key.split(".", 1)[1]] = flat.pop(key)
    build_problem(name, params)  # validates parameter names and ranges
    if "network.precision" in flat:
        prec = flat.pop("network.precision")
        if "run.precision" in flat and flat["run.precision"] != prec:
            raise ConfigurationError("network.precision and run.precision disagree")
        flat["run.precision"] = prec
    blocks = {s: {} for s in _SECTIONS}
    for key, value in flat.items():
        _check_key(key)
        section, _, fname = key.partition(".")
        blocks[section][fname] = _coerce(key, value)
    if blocks["run"].get("precision", "double") not in ("double", "single"):
        raise ConfigurationError(
            f"run.precision must be 'double' or 'single', got {blocks['run']['precision']!r}")
    try:
        built = {s: cls(**blocks[s]) for s, cls in _SECTIONS.items()}
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    config = RunConfig(problem=ProblemBlock(name, params, reference), **built)
    config.network_config(build_problem(name).input_dim)  # validates the network block
    counts = config.sampling.counts(name)
    if sum(counts) == 0:
        raise ConfigurationError("sampling counts are all zero")
    if counts[1] and not build_problem(name).has_time:
        raise ConfigurationError(f"sampling.n_i must be 0 for time-independent {name}")
    return config


def _parse_value(text):
    text = text.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if text.lower() in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip("'\"")


def parse_config_text(text, base_dir=None):
    flat, section = {}, None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if section and key.split(".", 1)[0] not in ("problem", *_SECTIONS):
            key = f"{section}.{key}"
        if key in flat:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        flat[key] = _parse_value(value)
    if base_dir is not None and isinstance(flat.get("problem.reference"), str):
        ref = Path(flat["problem.reference"])
        if not ref.is_absolute():
            flat["problem.reference"] = str(Path(base_dir) / ref)
    return config_from_flat(flat)


def load_config(path):
    path = Path(path)
    return parse_config_text(path.read_text(), base_dir=path.parent)


def dump_config(config):
    """Config as text that :func:`parse_config_text` reads back identically."""
    lines = []
    for key, value in flatten_config(config).items():
        if key == "problem.name":
            key = "problem"
        if isinstance(value, tuple):
            value = list(value)
        lines.append(f"{key} = {value!r}" if isinstance(value, (list, str)) and key != "problem"
                     else f"{key} = {value}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- outputs

def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    return "" if v is None else f"{v:.17e}"


def metrics_csv(records, log_wall_time=False):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in records:
        w.writerow([r.epoch, r.phase, _fmt(r.loss_total), _fmt(r.loss_r), _fmt(r.loss_i),
                    _fmt(r.loss_b), _fmt(r.rel_l2),
                    _fmt(r.wall_time_s) if log_wall_time else ""])
    return buf.getvalue()


def coordinate_names(problem):
    names = [f"x{i + 1}" for i in range(problem.spatial_dim)]
    return names + ["t"] if problem.has_time else names


def write_prediction_grid(state, problem, path, grid=None, reference=None):
    """CSV of predictions on the test grid, with exact values and errors when known.

    ``state`` is a :class:`TrainerState` or a bare parameter vector.
    """
    params = getattr(state, "params", state)
    if grid is None:
        try:
            grid = test_grid(problem, reference)
        except FileNotFoundError:
            if problem.exact_solution_available:
                raise
            grid = None
    if grid is None:
        raise ConfigurationError(f"no evaluation grid available for {problem.name}")
    pred = forward_value(params, grid.points).astype(float)
    cols = coordinate_names(problem) + ["u_pred"]
    data = [grid.points, pred[:, None]]
    if grid.values is not None:
        cols += ["u_exact", "abs_err"]
        data += [grid.values[:, None], np.abs(pred - grid.values)[:, None]]
    table = np.hstack(data)
    buf = io.StringIO()
    np.savetxt(buf, table, fmt="%.17e", delimiter=",", header=",".join(cols), comments="")
    _atomic_write(path, buf.getvalue())
    return Path(path)


# --------------------------------------------------------------------------- checkpoints

def save_checkpoint(state, path, config=None, seed=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sch = state.schedule
    meta = {
        "version": CHECKPOINT_VERSION,
        "package_version": __version__,
        "network": dataclasses.asdict(state.params.config),
        "config_hash": None if config is None else config.config_hash(),
        "config": None if config is None else dump_config(config),
        "seed": seed,
        "adam_step": state.adam.step_count,
        "schedule": {"period": sch.period, "epoch": sch.epoch},
        "rng": state.rng.bit_generator.state,
        "elapsed_s": state.elapsed_s,
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".npz")
    os.close(fd)
    try:
        np.savez(tmp, params=state.params.data, adam_m=state.adam.m, adam_v=state.adam.v,
                 w_residual=state.weights.residual, w_initial=state.weights.initial,
                 w_boundary=state.weights.boundary, excluded=state.excluded,
                 meta=np.array(json.dumps(meta, default=int)))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


@dataclass
class Checkpoint:
    state: TrainerState
    config: RunConfig
    seed: int
    config_hash: str


def load_checkpoint(path, config=None, seed=None):
    """Restore a checkpoint; refuse it if ``config``/``seed`` do not match."""
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(str(arrays["meta"]))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {meta.get('version')} != {CHECKPOINT_VERSION}")
    stored = None if meta["config"] is None else parse_config_text(meta["config"])
    if config is not None and config.config_hash() != meta["config_hash"]:
        raise CheckpointError(
            f"checkpoint was written for config {meta['config_hash']}, "
            f"this run has {config.config_hash()} (problem/sampling/network/optimizer/"
            "strategy/precision must match)")
    if seed is not None and seed != meta["seed"]:
        raise CheckpointError(f"checkpoint seed {meta['seed']} != requested seed {seed}")
    params = ParameterVector(NetworkConfig(**meta["network"]), arrays["params"])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    sch = ScheduleState(period=meta["schedule"]["period"], epoch=meta["schedule"]["epoch"],
                        log_phases=False)
    state = TrainerState(
        params=params,
        adam=AdamState(arrays["adam_m"], arrays["adam_v"], meta["adam_step"]),
        weights=AdaptiveWeights(arrays["w_residual"], arrays["w_initial"], arrays["w_boundary"]),
        schedule=sch, rng=rng, excluded=arrays["excluded"], elapsed_s=meta["elapsed_s"])
    return Checkpoint(state, stored, meta["seed"], meta["config_hash"])


# --------------------------------------------------------------------------- runs

@dataclass
class SeedResult:
    seed: int
    final_rel_l2: float = None
    epochs: int = 0
    wall_time_s: float = 0.0
    records: list = field(default_factory=list)
    error: str = None
    state: TrainerState = None

    @property
    def ok(self):
        return self.error is None


def _build(config, seed):
    problem = build_problem(config.problem.name, config.problem.params)
    samp_seed = seed if config.sampling.seed is None else config.sampling.seed
    sample_set = sample_training_set(problem, config.sampling.counts(problem.name), samp_seed)
    return problem, CollocationBatch(problem, sample_set)


def _eval_grid(problem, config):
    if problem.exact_solution_available or config.problem.reference is not None:
        return test_grid(problem, config.problem.reference)
    return None


def run_seed(config, seed, out_dir=None, state=None, max_epochs=None, keep_state=True):
    """Train one seed; write metrics, predictions and a checkpoint under ``out_dir``."""
    problem, batch = _build(config, seed)
    grid = _eval_grid(problem, config)
    net = config.network_config(problem.input_dim)
    max_epochs = config.run.max_epochs if max_epochs is None else max_epochs
    result = SeedResult(seed)
    seed_dir = None if out_dir is None else Path(out_dir) / f"seed_{seed}"
    start = time.perf_counter()
    try:
        state, records = train(batch, net, config.optimizer, config.strategy, max_epochs,
                               seed=seed, eval_every=config.run.eval_every, grid=grid,
                               state=state, log_phases=False)
    except NumericFailureError as exc:
        result.error = f"numeric failure: {exc}"
        result.wall_time_s = time.perf_counter() - start
        good = getattr(exc, "last_good_state", None)
        if seed_dir is not None and good is not None:
            save_checkpoint(good, seed_dir / "checkpoint_last_good.npz", config, seed)
        log.error("seed %s aborted: %s", seed, exc)
        return result
    result.wall_time_s = time.perf_counter() - start
    result.records = records
    result.epochs = state.epoch
    evals = [r.rel_l2 for r in records if r.rel_l2 is not None]
    result.final_rel_l2 = evals[-1] if evals else None
    if keep_state:
        result.state = state
    if seed_dir is not None:
        _atomic_write(seed_dir / "metrics.csv", metrics_csv(records, config.run.log_wall_time))
        if grid is not None:
            write_prediction_grid(state.params, problem, seed_dir / "prediction.csv", grid)
        save_checkpoint(state, seed_dir / "checkpoint.npz", config, seed)
    return result


@dataclass
class Summary:
    config: RunConfig
    results: list

    @property
    def complete(self):
        return all(r.ok for r in self.results)

    @property
    def finals(self):
        return [r.final_rel_l2 for r in self.results if r.ok and r.final_rel_l2 is not None]

    @property
    def param_count(self):
        problem = build_problem(self.config.problem.name)
        return self.config.network_config(problem.input_dim).n_params

    @property
    def flops_per_forward_est(self):
        problem = build_problem(self.config.problem.name)
        return 2 * self.config.network_config(problem.input_dim).n_weights

    @property
    def time_per_epoch_s_mean(self):
        per = [r.wall_time_s / r.epochs for r in self.results if r.ok and r.epochs]
        return statistics.fmean(per) if per else None

    def as_dict(self):
        f = self.finals
        d = {
            "problem": self.config.problem.name,
            "strategy": self.config.strategy.kind,
            "seeds": ",".join(str(r.seed) for r in self.results),
            "final_rel_l2_mean": statistics.fmean(f) if f else None,
            "final_rel_l2_median": statistics.median(f) if f else None,
            "final_rel_l2_min": min(f) if f else None,
            "final_rel_l2_max": max(f) if f else None,
            "final_rel_l2_per_seed": ",".join(
                "nan" if r.final_rel_l2 is None else f"{r.final_rel_l2:.17e}" for r in self.results),
            "param_count": self.param_count,
            "flops_per_forward_est": self.flops_per_forward_est,
            "time_per_epoch_s_mean": self.time_per_epoch_s_mean,
            "complete": self.complete,
        }
        failed = [f"{r.seed}:{r.error}" for r in self.results if not r.ok]
        if failed:
            d["failed_seeds"] = ";".join(failed)
        return d

    def to_text(self):
        lines = []
        for k, v in self.as_dict().items():
            if isinstance(v, float):
                v = f"{v:.17e}"
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def run_experiment(config, out_dir=None, seeds=None):
    """Train every seed and write a summary with ReL2 statistics and cost figures."""
    seeds = config.run.seeds if seeds is None else tuple(seeds)
    if config.problem.name == "allen_cahn" and config.problem.reference is None:
        log.warning("allen_cahn without problem.reference: no ReL2 will be reported")
    results = [run_seed(config, s, out_dir) for s in seeds]
    summary = Summary(config, results)
    if out_dir is not None:
        _atomic_write(Path(out_dir) / "summary.txt", summary.to_text())
    return summary


def read_summary(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


# --------------------------------------------------------------------------- sweeps

def parse_grid(text):
    """Parse ``"a.b=1,2;c.d=x,y"`` into a field -> values mapping.

    Fields joined with ``+`` vary together, their values joined with ``:``::

        strategy.s1+strategy.s2=1:1,1:10,5:1
    """
    grid = {}
    for term in filter(None, (t.strip() for t in text.split(";"))):
        if "=" not in term:
            raise ConfigurationError(f"grid term {term!r} lacks '='")
        keys, values = (s.strip() for s in term.split("=", 1))
        keys = tuple(k.strip() for k in keys.split("+"))
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigurationError(f"grid term {term!r} has no values")
        parsed = []
        for v in vals:
            parts = [_parse_value(p) for p in v.split(":")] if len(keys) > 1 else [_parse_value(v)]
            if len(parts) != len(keys):
                raise ConfigurationError(f"value {v!r} does not match fields {keys}")
            parsed.append(tuple(parts))
        grid[keys] = parsed
    if not grid:
        raise ConfigurationError("sweep grid is empty")
    return grid


def expand_grid(grid):
    if isinstance(grid, str):
        grid = parse_grid(grid)
    if not grid:
        raise ConfigurationError("sweep grid is empty")
    items = [((k,) if isinstance(k, str) else tuple(k), [v if isinstance(v, tuple) else (v,)
                                                         for v in vals])
             for k, vals in grid.items()]
    for keys, vals in items:
        if not vals:
            raise ConfigurationError(f"grid field {keys} has no values")
    cells = []
    for combo in itertools.product(*(vals for _, vals in items)):
        cell = {}
        for (keys, _), values in zip(items, combo):
            cell.update(zip(keys, values))
        cells.append(cell)
    return cells


def _label(overrides):
    return ";".join(f"{k}={v}" for k, v in overrides.items())


def matrix_csv(rows, seeds):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["configuration"] + [f"seed_{s}" for s in seeds] + ["mean", "median", "status"])
    for label, summary, error in rows:
        if summary is None:
            w.writerow([label] + [""] * len(seeds) + ["", "", f"failed: {error}"])
            continue
        per = {r.seed: r.final_rel_l2 for r in summary.results}
        d = summary.as_dict()
        w.writerow([label] + [_fmt(per.get(s)) for s in seeds]
                   + [_fmt(d["final_rel_l2_mean"]), _fmt(d["final_rel_l2_median"]),
                      "ok" if summary.complete else "incomplete"])
    return buf.getvalue()


def sweep(base, grid, out_dir=None, seeds=None):
    """One :func:`run_experiment` per grid cell; returns ``[(label, Summary|None, error)]``."""
    cells = expand_grid(grid)
    seeds = base.run.seeds if seeds is None else tuple(seeds)
    rows = []
    for i, overrides in enumerate(cells):
        label = _label(overrides)
        try:
            config = base.with_overrides(overrides)
            cell_dir = None if out_dir is None else Path(out_dir) / f"cell_{i:03d}"
            rows.append((label, run_experiment(config, cell_dir, seeds), None))
        except (ConfigurationError, NumericFailureError, OSError) as exc:
            log.error("sweep cell %s failed: %s", label, exc)
            rows.append((label, None, str(exc)))
    if out_dir is not None:
        _atomic_write(Path(out_dir) / "matrix.csv", matrix_csv(rows, seeds))
    return rows


def compare(configs, out_dir=None, labels=None):
    """Run several configs on their own seeds; rows of the matrix are the configs."""
    rows, all_seeds = [], []
    for i, config in enumerate(configs):
        label = labels[i] if labels else f"config_{i}"
        for s in config.run.seeds:
            if s not in all_seeds:
                all_seeds.append(s)
        cell_dir = None if out_dir is None else Path(out_dir) / label
        try:
            rows.append((label, run_experiment(config, cell_dir), None))
        except (ConfigurationError, NumericFailureError, OSError) as exc:
            rows.append((label, None, str(exc)))
    if out_dir is not None:
        _atomic_write(Path(out_dir) / "matrix.csv", matrix_csv(rows, all_seeds))
    return rows


def evaluate_checkpoint(path):
    ck = load_checkpoint(path)
    problem = build_problem(ck.config.problem.name, ck.config.problem.params)
    grid = _eval_grid(problem, ck.config)
    rel = None if grid is None else relative_l2(forward_value(ck.state.params, grid.points),
                                                grid.values)
    return {"epoch": ck.state.epoch, "seed": ck.seed, "problem": problem.name,
            "strategy": ck.config.strategy.kind, "rel_l2": rel}
