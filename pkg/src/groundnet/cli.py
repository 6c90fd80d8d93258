"""Command line interface: ``groundnet {gen-data,train,eval,robustness,viz}``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields

from groundnet import __version__, kernels
from groundnet import puddleworld as pw
from groundnet import shapeworld as sw
from groundnet.models import MODEL_KINDS, build_model, load_model, save_model
from groundnet.robustness import NOISE_KINDS, robustness_sweep, summarize, write_sweep
from groundnet.text import Vocabulary
from groundnet.training import TrainConfig, evaluate, train_classification, train_regression, train_rl, write_curves

log = logging.getLogger("groundnet")


# -- config handling -------------------------------------------------------
def load_config(path):
    """Flat JSON object with dotted keys, e.g. {"train.lr": 0.001}."""
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict) or any(isinstance(v, dict) for v in cfg.values()):
        raise ValueError("config must be a flat JSON object with dotted keys")
    return cfg


def section(cfg, prefix):
    p = prefix + "."
    return {k[len(p):]: v for k, v in cfg.items() if k.startswith(p)}


def train_config(cfg, args):
    known = {f.name for f in fields(TrainConfig)}
    values = section(cfg, "train")
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValueError(f"unknown train config keys: {unknown}")
    if args.task:
        values["task"] = args.task
    if args.model:
        values["model"] = args.model
    if args.seed is not None:
        values["seed"] = args.seed
    elif "seed" in cfg:
        values["seed"] = cfg["seed"]
    for name in ("epochs", "batch_size", "lr", "env_steps"):
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return TrainConfig(**values)


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out, command, config, inputs=(), seeds=None, outputs=()):
    manifest = {
        "command": command,
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
        "config": config,
        "seeds": seeds or {},
        "inputs": {os.path.basename(p): file_hash(p) for p in inputs},
        "outputs": sorted(os.path.basename(p) for p in outputs),
    }
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


# -- data directories ------------------------------------------------------
def data_files(data_dir, split):
    js = os.path.join(data_dir, f"{split}.jsonl")
    if not os.path.exists(js):
        raise FileNotFoundError(f"{js} does not exist")
    binp = os.path.join(data_dir, f"{split}.bin")
    return [js, binp] if os.path.exists(binp) else [js]


def load_split(data_dir, split):
    files = data_files(data_dir, split)
    if len(files) == 2:
        return sw.load_dataset(*files), files
    return pw.load_jsonl(files[0]), files


def texts(samples):
    return [s.caption if hasattr(s, "caption") else s.instruction for s in samples]


def build_vocab(samples):
    return Vocabulary.build(texts(samples), pw.NOISE_LEXICON)


# -- commands --------------------------------------------------------------
def cmd_gen_data(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    outputs = []
    if args.world == "puddleworld":
        pcfg = pw.PuddleConfig(**section(cfg, "puddle"))
        train = pw.generate_dataset(args.train, args.kind, seed, pcfg)
        test = pw.generate_dataset(args.test, args.kind, seed + 1_000_003, pcfg)
        for name, ds in (("train", train), ("test", test)):
            path = os.path.join(args.out, f"{name}.jsonl")
            pw.save_jsonl(ds, path)
            outputs.append(path)
        resolved = {"world": "puddleworld", "kind": args.kind, "train": args.train, "test": args.test,
                    "puddle": pcfg.__dict__}
    else:
        scfg = sw.SceneConfig(**section(cfg, "scene"))
        train = sw.generate_dataset(args.train, seed, scfg)
        test = sw.generate_dataset(args.test, seed + 1_000_003, scfg)
        for name, ds in (("train", train), ("test", test)):
            js, binp = (os.path.join(args.out, f"{name}.{ext}") for ext in ("jsonl", "bin"))
            sw.save_dataset(ds, js, binp)
            outputs += [js, binp]
        resolved = {"world": "shapeworld", "train": args.train, "test": args.test, "scene": scfg.__dict__}
    vocab = build_vocab(train)
    vpath = os.path.join(args.out, "vocab.txt")
    vocab.save(vpath)
    outputs.append(vpath)
    write_manifest(args.out, "gen-data", resolved, seeds={"data": seed, "test": seed + 1_000_003}, outputs=outputs)
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")


def cmd_train(args, cfg):
    tcfg = train_config(cfg, args)
    train, train_files = load_split(args.data, "train")
    test, test_files = load_split(args.data, "test")
    vocab = build_vocab(train)
    caption = hasattr(train[0], "caption")
    model_task = "classification" if tcfg.task == "classification" else "regression"
    shape = (8, 8) if caption else train[0].world.shape
    model = build_model(tcfg.model, len(vocab), task=model_task, shape=shape,
                        observation="pixel" if caption else "grid", seed=tcfg.seed, **section(cfg, "model"))
    runner = {"classification": train_classification, "regression": train_regression, "rl": train_rl}[tcfg.task]
    result = runner(train, model, vocab, tcfg, eval_set=test)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "model.ckpt")
    save_model(ckpt, model, vocab, {"train": tcfg.to_dict()})
    metrics = os.path.join(args.out, "metrics.json")
    result.report.save(metrics)
    curves = os.path.join(args.out, "curves.csv")
    write_curves(result.curves, curves)
    resolved = {"train": tcfg.to_dict(), "model": {"kind": tcfg.model, **model.config(), **section(cfg, "model")},
                "data": args.data}
    write_manifest(args.out, "train", resolved, inputs=train_files + test_files, seeds={"train": tcfg.seed},
                   outputs=[ckpt, metrics, curves])
    print(json.dumps(result.report.aggregates, sort_keys=True))


def _eval_config(meta, cfg, args):
    base = dict(meta.get("extra", {}).get("train", {}))
    base.update(section(cfg, "train"))
    if args.seed is not None:
        base["seed"] = args.seed
    if args.task:
        base["task"] = args.task
    return TrainConfig(**base)


def cmd_eval(args, cfg):
    model, vocab, meta = load_model(args.checkpoint)
    data, files = load_split(args.data, args.split)
    tcfg = _eval_config(meta, cfg, args)
    report = evaluate(data, model, vocab, tcfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "metrics.json")
    report.save(path)
    write_manifest(args.out, "eval", {"train": tcfg.to_dict(), "split": args.split, "data": args.data},
                   inputs=[args.checkpoint] + files, seeds={"eval": tcfg.seed}, outputs=[path])
    print(json.dumps(report.aggregates, sort_keys=True))


def _parse_named(items):
    out = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = os.path.splitext(os.path.basename(item))[0], item
        out[name] = path
    return out


def cmd_robustness(args, cfg):
    paths = _parse_named(args.checkpoint)
    loaded = {name: load_model(p) for name, p in paths.items()}
    data, files = load_split(args.data, args.split)
    first_meta = next(iter(loaded.values()))[2]
    tcfg = _eval_config(first_meta, cfg, args)
    models = {name: (m, v) for name, (m, v, _) in loaded.items()}
    kinds = args.noise_kind or list(NOISE_KINDS)
    amounts = args.noise_amount or list(range(1, 11))
    seeds = args.seeds or [0, 1, 2]
    rows = robustness_sweep(models, data, tcfg, kinds, amounts, seeds)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep.csv")
    write_sweep(rows, path)
    task = "classification" if hasattr(data[0], "caption") else tcfg.task
    summary = {f"{m}/{k}/{a}": {"mean": mu, "std": sd} for (m, k, a), (mu, sd) in summarize(rows, task).items()}
    spath = os.path.join(args.out, "summary.json")
    with open(spath, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    write_manifest(args.out, "robustness", {"train": tcfg.to_dict(), "kinds": kinds, "amounts": amounts,
                                            "models": sorted(paths), "data": args.data, "split": args.split},
                   inputs=list(paths.values()) + files, seeds={"noise": seeds}, outputs=[path, spath])
    print(f"wrote {len(rows)} sweep rows to {path}")


def cmd_viz(args, cfg):
    from groundnet.viz import interpretability_dump

    model, vocab, _ = load_model(args.checkpoint)
    data, files = load_split(args.data, args.split)
    if not 0 <= args.instance < len(data):
        raise IndexError(f"instance {args.instance} outside [0, {len(data)})")
    pair = None
    if args.pair:
        a, b, c, d = (int(v) for v in args.pair)
        pair = ((a, b), (c, d))
    interpretability_dump(model, vocab, data[args.instance], args.out, pair=pair)
    outs = [os.path.join(args.out, f) for f in ("Z1.json", "Z1_abs.pgm", "value.pgm", "attention.json")]
    write_manifest(args.out, "viz", {"instance": args.instance, "split": args.split, "pair": args.pair,
                                     "data": args.data}, inputs=[args.checkpoint] + files, outputs=outs)
    print(f"wrote interpretability dump to {args.out}")


# -- parser ----------------------------------------------------------------
def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="JSON file with flat dotted keys")
    common.add_argument("--out", default="out")
    common.add_argument("--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="groundnet", description="Grounded spatial instruction models.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate synthetic datasets")
    g.add_argument("world", choices=("puddleworld", "shapeworld"))
    g.add_argument("--kind", choices=("local", "global"), default="local")
    g.add_argument("--train", type=int, default=1566)
    g.add_argument("--test", type=int, default=399)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--model", choices=MODEL_KINDS, default=None)
    t.add_argument("--task", choices=("classification", "regression", "rl"), default=None)
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--env-steps", dest="env_steps", type=int, default=None)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--task", choices=("classification", "regression", "rl"), default=None)

    r = sub.add_parser("robustness", parents=[common], help="noise sweep over checkpoints")
    r.add_argument("--checkpoint", action="append", required=True, help="[name=]path, repeatable")
    r.add_argument("--data", required=True)
    r.add_argument("--split", default="test")
    r.add_argument("--task", choices=("classification", "regression", "rl"), default=None)
    r.add_argument("--noise-kind", dest="noise_kind", action="append", choices=NOISE_KINDS)
    r.add_argument("--noise-amount", dest="noise_amount", type=int, action="append")
    r.add_argument("--seeds", type=int, nargs="+", default=None)

    v = sub.add_parser("viz", parents=[common], help="interpretability dump for one instance")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--split", default="test")
    v.add_argument("--instance", type=int, default=0)
    v.add_argument("--pair", type=int, nargs=4, metavar=("R1", "C1", "R2", "C2"), default=None)
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "robustness": cmd_robustness, "viz": cmd_viz}


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config and not os.path.exists(args.config):
            raise FileNotFoundError(f"config file {args.config} does not exist")
        cfg = load_config(args.config)
        data = getattr(args, "data", None)
        if data and not os.path.isdir(data):
            raise FileNotFoundError(f"data directory {data} does not exist")
        ckpts = getattr(args, "checkpoint", None)
        for c in ([ckpts] if isinstance(ckpts, str) else ckpts or []):
            path = c.partition("=")[2] or c
            if not os.path.exists(path):
                raise FileNotFoundError(f"checkpoint {path} does not exist")
        COMMANDS[args.command](args, cfg)
    except Exception as err:  # one-line diagnostic, nonzero exit
        print(f"groundnet {args.command}: error: {err}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
