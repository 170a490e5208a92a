import csv
import json
import os

import numpy as np
import pytest

from aehpinn.exceptions import CheckpointError, ConfigurationError
from aehpinn.harness import (
    METRICS_HEADER,
    RunConfig,
    compare,
    dump_config,
    expand_grid,
    load_checkpoint,
    load_config,
    parse_config_text,
    parse_grid,
    read_summary,
    run_experiment,
    run_seed,
    save_checkpoint,
    sweep,
    write_prediction_grid,
)
from aehpinn.network import NetworkConfig, ParameterVector
from aehpinn.problems import build_problem, sample_training_set, write_reference
from aehpinn.strategies import StrategySpec

TINY = """
problem = convection_dominated
problem.epsilon = 0.1
sampling.n_r = 40
sampling.n_b = 2
network.hidden_layers = 2
network.width = 8
run.max_epochs = 6
run.eval_every = 3
run.seeds = [0, 1]
"""


@pytest.fixture
def tiny():
    return parse_config_text(TINY)


def write(tmp_path, text, name="c.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_minimal_config_defaults(tmp_path):
    config = load_config(write(tmp_path, "problem = heat_steep\n"))
    assert config.problem.name == "heat_steep"
    assert (config.network.hidden_layers, config.network.width) == (4, 50)
    assert config.network.activation == "tanh" and config.network.init == "he"
    assert config.optimizer.lr == 1e-3 and config.optimizer.ascent_lr == 1e-3
    s = config.strategy
    assert (s.kind, s.s1, s.s2, s.period) == ("aeh", 10, 1, 300)
    assert config.run.max_epochs == 100000 and config.run.eval_every == 100
    assert config.run.seeds == tuple(range(10))
    assert config.sampling.counts("heat_steep") == (54756, 1200, 2400)


def test_ablation_row_config(tmp_path):
    config = load_config(write(tmp_path, "problem = helmholtz\nstrategy.s1 = 50\nstrategy.s2 = 5\n"))
    assert (config.strategy.s1, config.strategy.s2) == (50, 5)


def test_section_headers_and_comments(tmp_path):
    text = "# comment\nproblem = sine_gordon\n[strategy]\nkind = hard_only  # trailing\n[run]\nseeds = 3\n"
    config = load_config(write(tmp_path, text))
    assert config.strategy.kind == "hard_only" and config.run.seeds == (3,)


@pytest.mark.parametrize("text,fragment", [
    ("problem = heat_steep\nstrategy.s_1 = 3\n", "strategy.s_1"),
    ("problem = heat_steep\nnetwork.widht = 3\n", "network.widht"),
    ("problem = heat_steep\nfoo = 1\n", "foo"),
    ("problem = heat_steep\nproblem.k = 1\n", "k"),
    ("problem = heat\n", "heat"),
    ("problem = heat_steep\nstrategy.s1 = 0\n", ">= 1"),
    ("problem = heat_steep\nrun.precision = quad\n", "precision"),
    ("problem = heat_steep\noptimizer.lr = -1\n", "lr"),
    ("problem = heat_steep\nstrategy.kind = greedy\n", "kind"),
    ("problem = heat_steep\nnetwork.width = 2.5\n", "integer"),
    ("problem = helmholtz\nsampling.n_i = 10\n", "n_i"),
    ("problem = heat_steep\nrun.seeds = []\n", "seeds"),
    ("problem = heat_steep\nproblem = helmholtz\n", "duplicate"),
    ("problem = heat_steep\njust words\n", "key = value"),
])
def test_config_errors_name_the_problem(tmp_path, text, fragment):
    with pytest.raises(ConfigurationError) as info:
        load_config(write(tmp_path, text))
    assert fragment in str(info.value)


def test_dump_round_trip(tiny):
    assert parse_config_text(dump_config(tiny)) == tiny


def test_reference_path_relative_to_config(tmp_path):
    write_reference(tmp_path / "ref.txt", np.array([[0.0, 0.5]]), np.array([-0.5]))
    config = load_config(write(tmp_path, "problem = allen_cahn\nproblem.reference = ref.txt\n"))
    assert config.problem.reference == str(tmp_path / "ref.txt")


def test_hash_ignores_run_bookkeeping(tiny):
    same = tiny.with_overrides({"run.max_epochs": 99, "run.eval_every": 7, "run.seeds": [4]})
    assert same.config_hash() == tiny.config_hash()
    assert tiny.with_overrides({"strategy.s1": 3}).config_hash() != tiny.config_hash()
    assert tiny.with_overrides({"run.precision": "single"}).config_hash() != tiny.config_hash()


def test_run_experiment_outputs(tmp_path, tiny):
    summary = run_experiment(tiny, tmp_path)
    assert summary.complete
    for seed in (0, 1):
        d = tmp_path / f"seed_{seed}"
        rows = list(csv.reader(open(d / "metrics.csv")))
        assert rows[0] == METRICS_HEADER
        assert [r[0] for r in rows[1:]] == [str(e) for e in range(7)]
        assert [bool(r[6]) for r in rows[1:]] == [True, False, False, True, False, False, True]
        assert all(r[7] == "" for r in rows[1:])
        assert (d / "prediction.csv").exists() and (d / "checkpoint.npz").exists()
    text = read_summary(tmp_path / "summary.txt")
    for key in ("final_rel_l2_mean", "final_rel_l2_per_seed", "param_count",
                "flops_per_forward_est", "time_per_epoch_s_mean"):
        assert key in text
    assert int(text["param_count"]) == NetworkConfig(1, 2, 8).n_params == 97
    assert int(text["flops_per_forward_est"]) == 2 * (8 + 64 + 8)
    per_seed = [float(v) for v in text["final_rel_l2_per_seed"].split(",")]
    assert float(text["final_rel_l2_mean"]) == pytest.approx(np.mean(per_seed), rel=1e-15)
    assert text["complete"] == "true"
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".")]


def test_heat_summary_parameter_count():
    config = parse_config_text("problem = heat_steep\n")
    from aehpinn.harness import Summary
    assert Summary(config, []).param_count == 7851


def test_repeated_seed_rows_identical(tiny):
    summary = run_experiment(tiny.with_overrides({"run.seeds": [1, 1]}))
    a, b = summary.results
    assert a.final_rel_l2 == b.final_rel_l2
    assert [r.loss_total for r in a.records] == [r.loss_total for r in b.records]


def test_metrics_csv_byte_identical(tmp_path, tiny):
    run_experiment(tiny, tmp_path / "a", seeds=[0])
    run_experiment(tiny, tmp_path / "b", seeds=[0])
    assert (tmp_path / "a/seed_0/metrics.csv").read_bytes() == \
        (tmp_path / "b/seed_0/metrics.csv").read_bytes()
    assert (tmp_path / "a/seed_0/prediction.csv").read_bytes() == \
        (tmp_path / "b/seed_0/prediction.csv").read_bytes()


def test_wall_time_column_opt_in(tmp_path, tiny):
    run_experiment(tiny.with_overrides({"run.log_wall_time": True}), tmp_path, seeds=[0])
    rows = list(csv.reader(open(tmp_path / "seed_0/metrics.csv")))
    assert all(float(r[7]) >= 0 for r in rows[1:])


def test_failed_seed_marks_summary_incomplete(tmp_path, tiny, monkeypatch):
    import aehpinn.harness as H
    real = H.train

    def flaky(batch, *args, seed=0, **kwargs):
        if seed == 1:
            batch.source = np.full_like(batch.source, np.nan)
        return real(batch, *args, seed=seed, **kwargs)

    monkeypatch.setattr(H, "train", flaky)
    summary = run_experiment(tiny, tmp_path)
    assert not summary.complete
    text = read_summary(tmp_path / "summary.txt")
    assert text["complete"] == "false" and "1:numeric failure" in text["failed_seeds"]
    assert text["final_rel_l2_per_seed"].endswith(",nan")
    assert (tmp_path / "seed_1/checkpoint_last_good.npz").exists()


def test_prediction_grid_heat(tmp_path):
    heat = build_problem("heat_steep")
    params = ParameterVector(NetworkConfig(2, 4, 50))
    path = write_prediction_grid(params, heat, tmp_path / "pred.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "x1,t,u_pred,u_exact,abs_err"
    assert len(lines) == 40402
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.all(data[:, 2] == 0.0)
    assert np.max(np.abs(data[:, 4] - np.abs(data[:, 2] - data[:, 3]))) <= 1e-15
    assert "e+" in lines[1] or "e-" in lines[1]


def test_prediction_grid_recomputed_errors(tmp_path):
    from conftest import random_params
    helm = build_problem("helmholtz")
    path = write_prediction_grid(random_params(2, seed=3), helm, tmp_path / "p.csv")
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert open(path).readline().strip() == "x1,x2,u_pred,u_exact,abs_err"
    assert np.max(np.abs(data[:, 4] - np.abs(data[:, 2] - data[:, 3]))) <= 1e-15


def test_prediction_grid_reference_free(tmp_path):
    ac = build_problem("allen_cahn")
    write_reference(tmp_path / "r.txt", np.array([[0.0, 0.5], [0.5, 1.0]]), np.array([0.1, 0.2]))
    from aehpinn.problems import test_grid
    grid = test_grid(ac, tmp_path / "r.txt")
    path = write_prediction_grid(ParameterVector(NetworkConfig(2, 1, 4)), ac, tmp_path / "p.csv", grid)
    assert len(path.read_text().splitlines()) == 3


def test_checkpoint_round_trip(tmp_path, tiny):
    result = run_seed(tiny, 0)
    path = save_checkpoint(result.state, tmp_path / "ck.npz", tiny, 0)
    ck = load_checkpoint(path, tiny, 0)
    a, b = result.state, ck.state
    assert np.array_equal(a.params.data, b.params.data) and a.params.data.dtype == b.params.data.dtype
    assert np.array_equal(a.adam.m, b.adam.m) and np.array_equal(a.adam.v, b.adam.v)
    assert a.adam.step_count == b.adam.step_count
    assert a.weights.equal(b.weights) and np.array_equal(a.excluded, b.excluded)
    assert (a.schedule.epoch, a.schedule.cycle, a.schedule.ratio) == \
        (b.schedule.epoch, b.schedule.cycle, b.schedule.ratio)
    assert a.rng.bit_generator.state == b.rng.bit_generator.state
    assert ck.config == tiny and ck.seed == 0


def test_split_run_matches_straight_run(tmp_path, tiny):
    config = tiny.with_overrides({"run.max_epochs": 20, "run.eval_every": 5})
    straight = run_seed(config, 0)
    first = run_seed(config, 0, max_epochs=10)
    save_checkpoint(first.state, tmp_path / "ck.npz", config, 0)
    ck = load_checkpoint(tmp_path / "ck.npz", config, 0)
    second = run_seed(config, 0, state=ck.state)
    assert second.final_rel_l2 == straight.final_rel_l2
    key = lambda r: (r.epoch, r.phase, r.loss_total, r.loss_r, r.loss_i, r.loss_b, r.rel_l2)
    assert [key(r) for r in first.records + second.records] == [key(r) for r in straight.records]


def test_checkpoint_rejects_other_config(tmp_path, tiny):
    result = run_seed(tiny, 0)
    save_checkpoint(result.state, tmp_path / "ck.npz", tiny, 0)
    with pytest.raises(CheckpointError) as info:
        load_checkpoint(tmp_path / "ck.npz", tiny.with_overrides({"strategy.s1": 2}))
    assert "config" in str(info.value)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "ck.npz", tiny, seed=5)


def test_checkpoint_rejects_other_version(tmp_path, tiny):
    result = run_seed(tiny, 0)
    path = save_checkpoint(result.state, tmp_path / "ck.npz", tiny, 0)
    with np.load(path) as z:
        arrays = dict(z)
    meta = json.loads(str(arrays["meta"]))
    meta["version"] = 99
    arrays["meta"] = np.array(json.dumps(meta))
    np.savez(path, **arrays)
    with pytest.raises(CheckpointError) as info:
        load_checkpoint(path)
    assert "version" in str(info.value)


def test_parse_grid():
    grid = parse_grid("strategy.kind=aeh,hard_only; strategy.s1=1,5")
    assert grid == {("strategy.kind",): [("aeh",), ("hard_only",)], ("strategy.s1",): [(1,), (5,)]}
    assert len(expand_grid(grid)) == 4
    zipped = expand_grid("strategy.s1+strategy.s2=1:1,1:10,5:1,10:1,50:5")
    assert [(c["strategy.s1"], c["strategy.s2"]) for c in zipped] == [
        (1, 1), (1, 10), (5, 1), (10, 1), (50, 5)]
    for bad in ("", " ; ", "strategy.s1", "strategy.s1=", "a+b=1:2:3"):
        with pytest.raises(ConfigurationError):
            parse_grid(bad)
    with pytest.raises(ConfigurationError):
        expand_grid({})


def test_sweep_matrix(tmp_path, tiny):
    base = tiny.with_overrides({"run.seeds": [0], "run.max_epochs": 2})
    rows = sweep(base, "strategy.kind=aeh,hard_only,easy_only", tmp_path)
    assert [r[0] for r in rows] == ["strategy.kind=aeh", "strategy.kind=hard_only",
                                    "strategy.kind=easy_only"]
    matrix = list(csv.reader(open(tmp_path / "matrix.csv")))
    assert matrix[0] == ["configuration", "seed_0", "mean", "median", "status"]
    assert len(matrix) == 4 and all(r[-1] == "ok" for r in matrix[1:])
    # controlled comparison: every cell trains on the same sample set
    from aehpinn.harness import _build
    sets = [_build(base.with_overrides({"strategy.kind": k}), 0)[1].sample_set
            for k in ("aeh", "hard_only", "easy_only")]
    assert sets[0].equal(sets[1]) and sets[0].equal(sets[2])


def test_sweep_flags_bad_cells_and_continues(tmp_path, tiny):
    base = tiny.with_overrides({"run.seeds": [0], "run.max_epochs": 1})
    rows = sweep(base, "strategy.s1=1,0,2", tmp_path)
    assert [r[1] is None for r in rows] == [False, True, False]
    matrix = list(csv.reader(open(tmp_path / "matrix.csv")))
    assert matrix[2][-1].startswith("failed")


def test_compare(tmp_path, tiny):
    a = tiny.with_overrides({"run.seeds": [0], "run.max_epochs": 1})
    b = a.with_overrides({"strategy.kind": "vanilla"})
    rows = compare([a, b], tmp_path, ["aeh", "vanilla"])
    assert [r[0] for r in rows] == ["aeh", "vanilla"]
    assert (tmp_path / "aeh/summary.txt").exists() and (tmp_path / "matrix.csv").exists()
