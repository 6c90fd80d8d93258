"""Cached end-to-end runs behind the acceptance suite.

Every run is described by a JSON-able spec. Its artifacts live under
``<root>/<name>-<hash>/`` where the hash covers the spec, so changing a
hyperparameter never reuses a stale result. A run directory holds
``report.json`` (test-set EvalReport), ``model.ckpt``, ``curves.csv`` and
``meta.json`` (wall time, best epoch). With ``repeat=True`` the run is executed
a second time from scratch and ``repeat.json`` records whether the two reports
were byte-identical.

    python3 -m groundnet.experiments [--root DIR] [--repeat] [NAME ...]
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import time
from functools import lru_cache

from groundnet import puddleworld as pw
from groundnet import robustness as rb
from groundnet import shapeworld as sw
from groundnet.models import build_model, load_model, save_model
from groundnet.text import Vocabulary
from groundnet.training import EvalReport, TrainConfig, train_classification, train_regression, train_rl, write_curves

log = logging.getLogger("groundnet.experiments")

DEFAULT_ROOT = os.environ.get("GROUNDNET_ARTIFACTS", os.path.join(os.getcwd(), "artifacts", "acceptance"))
TEST_SEED_OFFSET = 1_000_003
PW_SIZES = (1566, 399)
SW_SIZES = (9000, 500)

REGRESSION = {"task": "regression", "lr": 1e-3, "batch_size": 100, "epochs": 100, "patience": 10}
CLASSIFICATION = {"task": "classification", "lr": 1e-3, "batch_size": 100, "epochs": 30, "patience": 5}
RL = {"task": "rl", "lr": 1e-4, "batch_size": 32, "env_steps": 20_000, "target_sync": 100,
      "replay_capacity": 10_000, "episode_cap": 50}


def _runs():
    runs = {}
    for seed in (1, 2, 3):
        for model in ("trnetattn", "tcnn"):
            runs[f"reg-{model}-s{seed}"] = {"world": "puddleworld", "kind": "local", "sizes": PW_SIZES,
                                            "model": model, "seed": seed, "train": REGRESSION}
    runs["rl-trnetattn-s1"] = {"world": "puddleworld", "kind": "local", "sizes": PW_SIZES,
                               "model": "trnetattn", "seed": 1, "train": RL}
    for model in ("trnetattn", "tvgg"):
        runs[f"cls-{model}-s1"] = {"world": "shapeworld", "sizes": SW_SIZES, "model": model, "seed": 1,
                                   "train": CLASSIFICATION}
    return runs


RUNS = _runs()


def spec_hash(spec):
    return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()[:12]


def run_dir(name, root=None):
    return os.path.join(root or DEFAULT_ROOT, f"{name}-{spec_hash(RUNS[name])}")


@lru_cache(maxsize=8)
def dataset(world, seed, sizes, kind="local"):
    """(train, test, vocab) for a world and seed; the test split uses a disjoint seed."""
    n_train, n_test = sizes
    if world == "puddleworld":
        train = pw.generate_dataset(n_train, kind, seed)
        test = pw.generate_dataset(n_test, kind, seed + TEST_SEED_OFFSET)
        vocab = Vocabulary.build([s.instruction for s in train], pw.NOISE_LEXICON)
    else:
        train = sw.generate_dataset(n_train, seed)
        test = sw.generate_dataset(n_test, seed + TEST_SEED_OFFSET)
        vocab = Vocabulary.build([s.caption for s in train], pw.NOISE_LEXICON)
    return train, test, vocab


def _fresh(samples):
    # metric caches live on the samples; never let one run see another's
    for s in samples:
        if hasattr(s, "cache"):
            s.cache.clear()
    return samples


def execute(spec):
    """Train and evaluate one run from scratch. Returns (report, model, vocab, curves, meta)."""
    train, test, vocab = dataset(spec["world"], spec["seed"], tuple(spec["sizes"]), spec.get("kind", "local"))
    cfg = TrainConfig(model=spec["model"], seed=spec["seed"], **spec["train"])
    caption = spec["world"] == "shapeworld"
    model = build_model(spec["model"], len(vocab), task="classification" if caption else "regression",
                        shape=(8, 8) if caption else train[0].world.shape,
                        observation="pixel" if caption else "grid", seed=spec["seed"])
    runner = {"classification": train_classification, "regression": train_regression, "rl": train_rl}[cfg.task]
    start = time.perf_counter()
    result = runner(_fresh(train), model, vocab, cfg, eval_set=_fresh(test))
    meta = {"seconds": time.perf_counter() - start, "best_epoch": result.best_epoch, "spec": spec}
    return result.report, model, vocab, result.curves, meta


def ensure(name, root=None, repeat=False):
    """Run ``name`` unless its artifacts exist; returns the loaded EvalReport."""
    spec = RUNS[name]
    out = run_dir(name, root)
    report_path = os.path.join(out, "report.json")
    if not os.path.exists(report_path):
        log.info("running %s", name)
        report, model, vocab, curves, meta = execute(spec)
        os.makedirs(out, exist_ok=True)
        save_model(os.path.join(out, "model.ckpt"), model, vocab, {"train": report.config})
        write_curves(curves, os.path.join(out, "curves.csv"))
        with open(os.path.join(out, "meta.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, sort_keys=True, indent=1)
        report.save(report_path + ".tmp")
        os.replace(report_path + ".tmp", report_path)
    repeat_path = os.path.join(out, "repeat.json")
    if repeat and not os.path.exists(repeat_path):
        log.info("repeating %s", name)
        again = execute(spec)[0]
        with open(report_path, encoding="utf-8") as fh:
            first = fh.read()
        same = first == again.to_json() + "\n"
        with open(repeat_path, "w", encoding="utf-8") as fh:
            json.dump({"identical": same, "sha256": hashlib.sha256(first.encode()).hexdigest()}, fh, indent=1)
    return EvalReport.load(report_path)


def load_run(name, root=None):
    """(model, vocab, meta) of a finished run."""
    model, vocab, _ = load_model(os.path.join(run_dir(name, root), "model.ckpt"))
    with open(os.path.join(run_dir(name, root), "meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    return model, vocab, meta


def repeat_status(name, root=None):
    path = os.path.join(run_dir(name, root), "repeat.json")
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)["identical"]


def noise_sweep(seed, root=None, amounts=(1, 10), noise_seeds=(0, 1, 2)):
    """Sweep rows for the regression models of one seed, cached as JSON."""
    key = spec_hash([RUNS[f"reg-trnetattn-s{seed}"], RUNS[f"reg-tcnn-s{seed}"], list(amounts), list(noise_seeds)])
    path = os.path.join(root or DEFAULT_ROOT, f"sweep-s{seed}-{key}.json")
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    models, clean = {}, {}
    for kind in ("trnetattn", "tcnn"):
        name = f"reg-{kind}-s{seed}"
        clean[kind] = ensure(name, root).mean("MD")
        model, vocab, _ = load_run(name, root)
        models[kind] = (model, vocab)
    _, test, _ = dataset("puddleworld", seed, tuple(RUNS[f"reg-trnetattn-s{seed}"]["sizes"]))
    cfg = TrainConfig(task="regression", seed=seed)
    rows = rb.robustness_sweep(models, _fresh(list(test)), cfg, amounts=amounts, seeds=noise_seeds, clean=clean)
    with open(path + ".tmp", "w", encoding="utf-8") as fh:
        json.dump(rows, fh, sort_keys=True, indent=1)
    os.replace(path + ".tmp", path)
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("names", nargs="*", help=f"runs to execute (default: all of {', '.join(RUNS)})")
    ap.add_argument("--root", default=None)
    ap.add_argument("--repeat", action="store_true", help="re-run each run and record report equality")
    ap.add_argument("--sweeps", action="store_true", help="also compute the noise sweeps")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for name in args.names or RUNS:
        rep = ensure(name, args.root, repeat=args.repeat)
        print(name, json.dumps({k: round(v["mean"], 4) for k, v in rep.aggregates.items()}), flush=True)
    if args.sweeps:
        for seed in (1, 2, 3):
            noise_sweep(seed, args.root)


if __name__ == "__main__":
    main()
