"""Heatmap export and interpretability dumps."""
from __future__ import annotations

import json
import os

import numpy as np

from groundnet import puddleworld as pw
from groundnet.rnet import TRNet, neighbour_pairs
from groundnet.tensor import ConfigError
from groundnet.text import tokenize


def normalize_grid(grid):
    """Min-max scale to integers in [0, 255]; a constant grid maps to 128."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"heatmaps need a 2-D grid, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("grid has non-finite entries")
    lo, hi = g.min(), g.max()
    if hi == lo:
        return np.full(g.shape, 128, dtype=np.uint8)
    return np.round((g - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_heatmap(grid, path, scale=1):
    """Write a binary P5 graymap, one pixel per cell (times ``scale``)."""
    if int(scale) < 1:
        raise ValueError("scale must be a positive integer")
    img = normalize_grid(grid)
    img = np.repeat(np.repeat(img, int(scale), axis=0), int(scale), axis=1)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    return path


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError("not a binary graymap")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval > 255:
        raise ValueError("16-bit graymaps are not supported")
    pos += 1
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def model_inputs(sample, vocab):
    if hasattr(sample, "caption"):
        return sample.scene.image[None].astype(np.float64), [vocab.encode(sample.caption)]
    return pw.entity_grid(sample.world)[None], [vocab.encode(sample.instruction)]


def forward_maps(model, vocab, sample):
    """Output plus Z1 / Z2 / per-pair scores and attention for one sample."""
    obs, ids = model_inputs(sample, vocab)
    out, aux = model(obs, ids, aux=True)
    res = {"out": out.data[0]}
    for key in ("Z1", "Z2"):
        if aux.get(key) is not None:
            res[key] = aux[key].data[0]
    if "r" in aux:
        res["r"] = aux["r"].data[0]
    if "alpha" in aux:
        res["alpha"] = np.asarray(aux["alpha"])[0]
    return res


def pair_index(shape, cell_i, cell_j):
    m, n = shape
    src, dst, _, _ = neighbour_pairs(m, n)
    a, b = cell_i[0] * n + cell_i[1], cell_j[0] * n + cell_j[1]
    hits = np.flatnonzero((src == a) & (dst == b))
    if not len(hits):
        raise ValueError(f"cells {cell_i} and {cell_j} are not neighbours")
    return int(hits[0])


def pair_attention(model, vocab, sample, cell_i, cell_j):
    """(tokens, weights) of the word attention for one ordered cell pair."""
    if not isinstance(model, TRNet) or not model.attention:
        raise ConfigError("word attention is only defined for the attention model")
    maps = forward_maps(model, vocab, sample)
    toks = tokenize(sample.caption if hasattr(sample, "caption") else sample.instruction)
    p = pair_index(maps["Z1"].shape, cell_i, cell_j)
    return toks, maps["alpha"][p][:len(toks)]


def interpretability_dump(model, vocab, sample, out_dir, pair=None, scale=8):
    """Write Z1.json, Z1_abs.pgm, value.pgm and attention.json for one sample."""
    if not (isinstance(model, TRNet) or getattr(model, "kind", "") == "tcnn"):
        raise ConfigError(f"model {getattr(model, 'kind', model)!r} has no relation map to visualise")
    os.makedirs(out_dir, exist_ok=True)
    maps = forward_maps(model, vocab, sample)
    z1 = maps["Z1"]
    record = {"Z1": z1.tolist(), "Z1_abs": np.abs(z1).tolist()}
    if "Z2" in maps:
        record["Z2"] = maps["Z2"].tolist()
    if model.task == "regression":
        record["V"] = maps["out"].tolist()
    else:
        record["logits"] = maps["out"].tolist()
    with open(os.path.join(out_dir, "Z1.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, sort_keys=True)
    export_heatmap(np.abs(z1), os.path.join(out_dir, "Z1_abs.pgm"), scale)
    value = maps["out"] if model.task == "regression" else z1
    export_heatmap(value, os.path.join(out_dir, "value.pgm"), scale)

    toks = tokenize(sample.caption if hasattr(sample, "caption") else sample.instruction)
    att = {"tokens": toks}
    if "alpha" in maps:
        if pair is None:
            # default: the strongest pair around the argmax of |Z1|
            m, n = z1.shape
            cell = np.unravel_index(int(np.argmax(np.abs(z1))), z1.shape)
            src, dst, _, _ = neighbour_pairs(m, n)
            cand = np.flatnonzero(src == cell[0] * n + cell[1])
            p = int(cand[np.argmax(maps["r"][cand])])
            pair = ((int(src[p] // n), int(src[p] % n)), (int(dst[p] // n), int(dst[p] % n)))
        p = pair_index(z1.shape, pair[0], pair[1])
        att.update({"pair": [list(pair[0]), list(pair[1])], "alpha": maps["alpha"][p][:len(toks)].tolist()})
    else:
        att.update({"pair": None, "alpha": (np.ones(len(toks)) / len(toks)).tolist(), "uniform": True})
    with open(os.path.join(out_dir, "attention.json"), "w", encoding="utf-8") as fh:
        json.dump(att, fh, sort_keys=True)
    return out_dir


def chebyshev(a, b):
    return max(abs(int(a[0]) - int(b[0])), abs(int(a[1]) - int(b[1])))


def referent_localization(model, vocab, samples, radius=1, batch=128):
    """Fraction of samples whose argmax |Z1| lies within ``radius`` (Chebyshev)
    of the referent object."""
    from groundnet.training import prepare

    data = prepare(samples, vocab)
    hits = []
    for lo in range(0, len(samples), batch):
        idx = np.arange(lo, min(lo + batch, len(samples)))
        _, aux = model(*data.batch(idx), aux=True)
        z1 = np.abs(aux["Z1"].data)
        for k, i in enumerate(idx):
            cell = np.unravel_index(int(np.argmax(z1[k])), z1[k].shape)
            hits.append(chebyshev(cell, samples[i].referent) <= radius)
    return float(np.mean(hits)), hits

