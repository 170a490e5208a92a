"""Scaled convergence runs on the convection problem, with a result store.

Each run trains 5,000 epochs, which takes minutes.  Finished runs are stored
in ``data/smoke_results.json`` together with a fingerprint of the numeric
source code and the loss values of the first epochs.  A stored run is reused
only while the fingerprint matches and a fresh short run reproduces the
stored loss prefix bit for bit; otherwise it is trained again.

Run ``python3 tests/smoke.py`` to fill the store ahead of the test suite.
"""

import ast
import hashlib
import json
import sys
import time
from pathlib import Path

import numba
import numpy as np

import aehpinn
from aehpinn.harness import parse_config_text, run_seed

STORE = Path(__file__).parent / "data" / "smoke_results.json"
NUMERIC_MODULES = ("autodiff", "groups", "losses", "network", "problems", "strategies")
PREFIX_EPOCHS = 3

BASE = """
problem = convection_dominated
problem.epsilon = 0.01
sampling.n_r = 2501
sampling.n_b = 2
run.max_epochs = 5000
run.eval_every = 500
run.precision = single
"""

# matched update counts: every variant takes 11 parameter updates per epoch
VARIANTS = {
    "aeh": "strategy.kind = aeh\nstrategy.s1 = 10\nstrategy.s2 = 1\n",
    "hard_only": "strategy.kind = hard_only\nstrategy.s1 = 11\n",
    "easy_only": "strategy.kind = easy_only\nstrategy.s2 = 11\n",
}
SEEDS = (0, 1, 2, 3, 4)


def config(kind, max_epochs=None):
    cfg = parse_config_text(BASE + VARIANTS[kind])
    if max_epochs is not None:
        cfg = cfg.with_overrides({"run.max_epochs": max_epochs})
    return cfg


def _strip_docstrings(tree):
    for node in ast.walk(tree):
        body = getattr(node, "body", None)
        if isinstance(body, list) and body and isinstance(body[0], ast.Expr) \
                and isinstance(body[0].value, ast.Constant) and isinstance(body[0].value.value, str):
            node.body = body[1:] or [ast.Pass()]
    return tree


def fingerprint():
    """Hash of the numeric modules' syntax trees (comments and docstrings ignored)."""
    h = hashlib.sha256()
    src = Path(aehpinn.__file__).parent
    for name in NUMERIC_MODULES:
        tree = _strip_docstrings(ast.parse((src / f"{name}.py").read_text()))
        h.update(ast.dump(tree).encode())
    h.update(f"numpy {np.__version__} numba {numba.__version__}".encode())
    h.update((BASE + json.dumps(VARIANTS, sort_keys=True)).encode())
    return h.hexdigest()


def _prefix(records):
    return [float(r.loss_total).hex() for r in records[:PREFIX_EPOCHS + 1]]


def _load():
    if STORE.exists():
        data = json.loads(STORE.read_text())
        if data.get("fingerprint") == fingerprint():
            return data
    return {"fingerprint": fingerprint(), "runs": {}}


def _save(data):
    STORE.parent.mkdir(parents=True, exist_ok=True)
    tmp = STORE.with_suffix(".tmp")
    tmp.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    tmp.replace(STORE)


def train_run(kind, seed):
    start = time.perf_counter()
    result = run_seed(config(kind), seed, keep_state=False)
    if not result.ok:
        raise RuntimeError(f"{kind} seed {seed} failed: {result.error}")
    return {
        "final_rel_l2": result.final_rel_l2,
        "curve": {str(r.epoch): r.rel_l2 for r in result.records if r.rel_l2 is not None},
        "prefix": _prefix(result.records),
        "wall_time_s": time.perf_counter() - start,
    }


def verify_prefix(kind, seed, stored):
    """Retrain the first epochs and compare with the stored loss values."""
    short = run_seed(config(kind, PREFIX_EPOCHS), seed, keep_state=False)
    return _prefix(short.records) == stored["prefix"]


def final_rel_l2(kind, seed, log=None):
    """Final ReL2 of one smoke run and whether it came from the store."""
    data = _load()
    key = f"{kind}/{seed}"
    run = data["runs"].get(key)
    if run is not None and verify_prefix(kind, seed, run):
        return run["final_rel_l2"], True
    if log:
        log(f"training {key} (5000 epochs)")
    run = train_run(kind, seed)
    data = _load()
    data["runs"][key] = run
    _save(data)
    return run["final_rel_l2"], False


def main(argv):
    kinds = argv or list(VARIANTS)
    order = [(k, s) for k in kinds for s in SEEDS]
    if "aeh" in kinds:
        order = [("aeh", s) for s in SEEDS] + [o for o in order if o[0] != "aeh"]
    for kind, seed in order:
        value, cached = final_rel_l2(kind, seed, log=lambda m: print(m, flush=True))
        print(f"{kind} seed {seed}: final ReL2 {value:.3e}{' (stored)' if cached else ''}",
              flush=True)


if __name__ == "__main__":
    main(sys.argv[1:])
