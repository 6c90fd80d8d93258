"""Evaluation-time perturbations: unseen decorative objects on the map,
irrelevant words in the instruction, Gaussian patches on images."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from groundnet import puddleworld as pw
from groundnet import shapeworld as sw
from groundnet.text import detokenize, tokenize
from groundnet.training import evaluate

NOISE_KINDS = ("observational", "textual")
MAX_AMOUNT = 10
_KIND_CODE = {"observational": 0, "textual": 1}
SWEEP_COLUMNS = ("model", "noise_kind", "amount", "seed", "clean_metric", "noisy_metric", "relative_change")


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    amount: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise NoiseError(f"unknown noise kind {self.kind!r}")
        if not 0 <= int(self.amount) <= MAX_AMOUNT:
            raise NoiseError(f"noise amount must lie in [0, {MAX_AMOUNT}], got {self.amount}")


def inject_observation_noise(world, spec, rng=None):
    """Copy of ``world`` with ``spec.amount`` distinct unseen objects dropped on
    empty grass cells other than the goal. Dynamics and rewards are untouched."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    out = world.copy()
    if spec.amount == 0:
        return out
    free = [tuple(c) for c in np.argwhere((world.terrain == pw.GRASS) & (world.objects == 0))
            if tuple(c) != tuple(world.goal)]
    if len(free) < spec.amount:
        raise NoiseError(f"only {len(free)} free cells for {spec.amount} noise objects")
    cells = rng.choice(len(free), size=spec.amount, replace=False)
    codes = rng.choice(pw.UNSEEN_CODES, size=spec.amount, replace=False)
    for c, code in zip(cells, codes):
        out.objects[free[c]] = int(code)
    return out


@dataclass(frozen=True)
class NoisyText:
    text: str
    position: int
    inserted: tuple

    def __str__(self):
        return self.text

    def original(self):
        toks = tokenize(self.text)
        return detokenize(toks[:self.position] + toks[self.position + len(self.inserted):])


def inject_text_noise(instruction, spec, lexicon=pw.NOISE_LEXICON, rng=None):
    """Insert ``spec.amount`` lexicon words (with replacement) contiguously at
    one uniformly chosen gap of the tokenized instruction."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    toks = tokenize(instruction)
    if spec.amount == 0:
        return NoisyText(detokenize(toks), 0, ())
    pos = int(rng.integers(len(toks) + 1))
    words = tuple(lexicon[i] for i in rng.integers(len(lexicon), size=spec.amount))
    return NoisyText(detokenize(toks[:pos] + list(words) + toks[pos:]), pos, words)


def _rng_for(spec, index):
    return np.random.default_rng([spec.seed, index, _KIND_CODE[spec.kind], spec.amount])


def perturb_sample(sample, spec, index, lexicon=pw.NOISE_LEXICON):
    """Noisy copy of one instruction or caption sample (fresh metric cache)."""
    rng = _rng_for(spec, index)
    if hasattr(sample, "caption"):
        if spec.kind == "observational":
            img = sw.inject_pixel_noise(sample.scene.image, spec.amount, rng)
            return replace(sample, scene=replace(sample.scene, image=img))
        return replace(sample, caption=inject_text_noise(sample.caption, spec, lexicon, rng).text)
    if spec.kind == "observational":
        return replace(sample, world=inject_observation_noise(sample.world, spec, rng), cache={})
    return replace(sample, instruction=inject_text_noise(sample.instruction, spec, lexicon, rng).text, cache={})


def perturb_dataset(samples, spec, lexicon=pw.NOISE_LEXICON):
    return [perturb_sample(s, spec, i, lexicon) for i, s in enumerate(samples)]


def metric_for(task):
    return {"classification": "ACC", "regression": "MD", "rl": "PQ"}[task]


def relative_change(clean, noisy):
    if clean == 0:
        return 0.0 if noisy == 0 else float("inf") * np.sign(noisy)
    return (noisy - clean) / abs(clean)


def degradation(task, rel):
    """Relative change re-signed so that larger always means worse."""
    return rel if metric_for(task) == "MD" else -rel


def max_workers():
    try:
        return max(1, int(os.environ.get("GROUNDNET_THREADS", "1")))
    except ValueError:
        return 1


def robustness_sweep(models, dataset, config, kinds=NOISE_KINDS, amounts=tuple(range(1, 11)), seeds=(0, 1, 2),
                     clean=None, lexicon=pw.NOISE_LEXICON):
    """Evaluate every (model, kind, amount, seed) cell on a noisy copy of
    ``dataset`` and compare it with the clean metric.

    ``models`` maps a name to ``(model, vocab)``. ``clean`` maps a name to a
    precomputed clean metric; when omitted every clean run happens here, and
    when given it must cover every model.
    """
    task = "classification" if hasattr(dataset[0], "caption") else config.task
    key = metric_for(task)
    if clean is None:
        clean = {name: evaluate(dataset, model, vocab, config).mean(key) for name, (model, vocab) in models.items()}
    missing = sorted(set(models) - set(clean))
    if missing:
        raise NoiseError(f"no clean baseline for {', '.join(missing)}")
    cells = [(name, kind, int(a), int(s)) for name in models for kind in kinds for a in amounts for s in seeds]

    def run(cell):
        name, kind, amount, seed = cell
        model, vocab = models[name]
        noisy = perturb_dataset(dataset, NoiseSpec(kind, amount, seed), lexicon)
        value = clean[name] if amount == 0 else evaluate(noisy, model, vocab, config).mean(key)
        return {"model": name, "noise_kind": kind, "amount": amount, "seed": seed,
                "clean_metric": clean[name], "noisy_metric": value,
                "relative_change": relative_change(clean[name], value)}

    with ThreadPoolExecutor(max_workers=max_workers()) as pool:
        rows = list(pool.map(run, cells))
    return rows


def summarize(rows, task):
    """Mean and std of the degradation per (model, kind, amount)."""
    groups = {}
    for r in rows:
        groups.setdefault((r["model"], r["noise_kind"], r["amount"]), []).append(
            degradation(task, r["relative_change"]))
    return {k: (float(np.mean(v)), float(np.std(v))) for k, v in sorted(groups.items())}


def write_sweep(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in SWEEP_COLUMNS})
