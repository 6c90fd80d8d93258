"""Model registry and checkpoint round-trips."""
from __future__ import annotations

from groundnet import checkpoint
from groundnet.baselines import TCNN, TUVFA, TVGG
from groundnet.rnet import TRNet
from groundnet.tensor import ConfigError

MODEL_KINDS = ("trnetattn", "trnet", "tcnn", "tuvfa", "tvgg")


def build_model(kind, vocab_size, task="regression", shape=(10, 10), observation="grid", seed=0, **kw):
    if kind in ("trnetattn", "trnet"):
        return TRNet(vocab_size, shape=shape, attention=kind == "trnetattn", task=task,
                     observation=observation, seed=seed, **kw)
    if kind == "tcnn":
        return TCNN(vocab_size, shape=shape, task=task, observation=observation, seed=seed, **kw)
    if kind == "tuvfa":
        if task != "regression" or observation != "grid":
            raise ConfigError("tuvfa only supports value-map prediction on grid worlds")
        return TUVFA(vocab_size, shape=shape, seed=seed, **kw)
    if kind == "tvgg":
        if task != "classification" or observation != "pixel":
            raise ConfigError("tvgg only supports caption classification on images")
        return TVGG(vocab_size, seed=seed, **kw)
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def model_meta(model, vocab):
    return {"kind": model.kind, "vocab_size": len(vocab), "vocab": vocab.to_list(),
            "task": model.task, "observation": model.observation, "config": model.config()}


def save_model(path, model, vocab, extra=None):
    meta = model_meta(model, vocab)
    if extra:
        meta["extra"] = extra
    checkpoint.save(path, model.kind, model.state_dict(), meta)


def load_model(path):
    """Returns (model, vocabulary, metadata)."""
    from groundnet.text import Vocabulary

    kind, meta, state = checkpoint.load(path)
    cfg = dict(meta["config"])
    shape = tuple(cfg.pop("shape", (10, 10)))
    cfg.pop("task", None)
    cfg.pop("observation", None)
    cfg.pop("attention", None)
    if kind == "tvgg":
        cfg["channels"] = tuple(cfg["channels"])
        cfg["dense"] = tuple(cfg["dense"])
        model = TVGG(meta["vocab_size"], **cfg)
    elif kind == "tuvfa":
        model = TUVFA(meta["vocab_size"], shape=shape, **cfg)
    else:
        model = build_model(kind, meta["vocab_size"], task=meta["task"], shape=shape,
                            observation=meta["observation"], **cfg)
    model.load_state_dict(state)
    return model, Vocabulary(meta["vocab"]), meta
