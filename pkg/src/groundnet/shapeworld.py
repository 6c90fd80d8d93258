"""ShapeWorld-style scenes and spatial captions for binary classification."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from groundnet.puddleworld import GenerationError

SHAPES = ("square", "rectangle", "triangle", "pentagon", "cross", "circle", "semicircle", "ellipse")
COLORS = {
    "red": (230, 30, 30),
    "green": (30, 200, 30),
    "blue": (40, 70, 240),
    "yellow": (235, 225, 30),
    "magenta": (220, 40, 220),
    "cyan": (30, 220, 220),
    "gray": (128, 128, 128),
    "white": (255, 255, 255),
}
RELATIONS = ("to the left of", "to the right of", "above", "below")
# shapes whose bounding box is wider than tall
_FLAT = {"rectangle": 0.6, "ellipse": 0.6, "semicircle": 0.5}


@dataclass(frozen=True)
class SceneConfig:
    size: int = 64
    min_shapes: int = 4
    max_shapes: int = 5
    min_size: int = 10
    max_size: int = 16
    max_retries: int = 200
    tie_margin: float = 2.0


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    color: str
    center: tuple
    size: int

    @property
    def bbox(self):
        w = self.size
        h = max(3, int(round(self.size * _FLAT.get(self.kind, 1.0))))
        x0 = self.center[0] - w / 2.0
        y0 = self.center[1] - h / 2.0
        return (x0, y0, x0 + w, y0 + h)


@dataclass
class Scene:
    image: np.ndarray
    shapes: list


@dataclass
class CaptionSample:
    scene: Scene
    caption: str
    label: bool


def _boxes_disjoint(a, b, margin=1.0):
    return a[2] + margin <= b[0] or b[2] + margin <= a[0] or a[3] + margin <= b[1] or b[3] + margin <= a[1]


def _polygon(kind, box):
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    w, h = x1 - x0, y1 - y0
    if kind == "triangle":
        return [(cx, y0), (x1, y1), (x0, y1)]
    if kind == "pentagon":
        return [(cx + w / 2 * math.sin(2 * math.pi * i / 5), cy - h / 2 * math.cos(2 * math.pi * i / 5))
                for i in range(5)]
    if kind == "cross":
        a, b = w / 3, h / 3
        return [(x0 + a, y0), (x0 + 2 * a, y0), (x0 + 2 * a, y0 + b), (x1, y0 + b), (x1, y0 + 2 * b),
                (x0 + 2 * a, y0 + 2 * b), (x0 + 2 * a, y1), (x0 + a, y1), (x0 + a, y0 + 2 * b),
                (x0, y0 + 2 * b), (x0, y0 + b), (x0 + a, y0 + b)]
    return None


def draw_shape(draw, spec):
    box = spec.bbox
    # PIL boxes are inclusive of the far edge
    pil_box = [box[0], box[1], box[2] - 1, box[3] - 1]
    color = COLORS[spec.color]
    if spec.kind in ("square", "rectangle"):
        draw.rectangle(pil_box, fill=color)
    elif spec.kind in ("circle", "ellipse"):
        draw.ellipse(pil_box, fill=color)
    elif spec.kind == "semicircle":
        x0, y0, x1, y1 = pil_box
        draw.pieslice([x0, y0, x1, y0 + 2 * (y1 - y0)], 180, 360, fill=color)
    else:
        draw.polygon(_polygon(spec.kind, pil_box), fill=color)


def rasterize(shapes, size=64):
    img = Image.new("RGB", (size, size), (0, 0, 0))
    draw = ImageDraw.Draw(img)
    for s in shapes:
        draw_shape(draw, s)
    return np.asarray(img, dtype=np.float64) / 255.0


def render_scene(seed, config=SceneConfig()):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    count = int(rng.integers(config.min_shapes, config.max_shapes + 1))
    for _ in range(config.max_retries):
        shapes = []
        for _ in range(count):
            placed = False
            for _ in range(50):
                kind = SHAPES[rng.integers(len(SHAPES))]
                color = list(COLORS)[rng.integers(len(COLORS))]
                size = int(rng.integers(config.min_size, config.max_size + 1))
                half = size / 2.0
                cx = float(rng.integers(int(math.ceil(half)), int(config.size - math.ceil(half)) + 1))
                cy = float(rng.integers(int(math.ceil(half)), int(config.size - math.ceil(half)) + 1))
                spec = ShapeSpec(kind, color, (cx, cy), size)
                b = spec.bbox
                if b[0] < 0 or b[1] < 0 or b[2] > config.size or b[3] > config.size:
                    continue
                if all(_boxes_disjoint(b, o.bbox) for o in shapes):
                    shapes.append(spec)
                    placed = True
                    break
            if not placed:
                break
        if len(shapes) == count:
            return Scene(rasterize(shapes, config.size), shapes)
    raise GenerationError(f"could not place {count} non-overlapping shapes")


# -- captions ----------------------------------------------------------------
def _article(word):
    return "an" if word[0] in "aeiou" else "a"


def describe(color, kind):
    noun = kind or "shape"
    words = " ".join(w for w in (color, noun) if w)
    return f"{_article(words)} {words}"


def _matches(spec, color, kind):
    return (color is None or spec.color == color) and (kind is None or spec.kind == kind)


def _delta(rel, a, b):
    """Signed margin by which ``a`` satisfies ``rel`` relative to ``b``."""
    if rel == "to the left of":
        return b.center[0] - a.center[0]
    if rel == "to the right of":
        return a.center[0] - b.center[0]
    if rel == "above":
        return b.center[1] - a.center[1]
    return a.center[1] - b.center[1]


def evaluate_caption(shapes, subj, rel, obj, margin=2.0):
    """Truth of "subj rel obj" and whether some matching pair is a near-tie."""
    truth, ambiguous = False, False
    for i, a in enumerate(shapes):
        if not _matches(a, *subj):
            continue
        for j, b in enumerate(shapes):
            if i == j or not _matches(b, *obj):
                continue
            d = _delta(rel, a, b)
            if abs(d) < margin:
                ambiguous = True
            if d > 0:
                truth = True
    return truth, ambiguous


def _random_descriptor(spec, rng):
    mode = rng.integers(3)
    if mode == 0:
        return (spec.color, None)
    if mode == 1:
        return (None, spec.kind)
    return (spec.color, spec.kind)


def caption_text(subj, rel, obj):
    return f"{describe(*subj)} is {rel} {describe(*obj)}"


def generate_caption(scene, seed, target_label, config=SceneConfig()):
    """Caption whose geometric truth value equals ``target_label``."""
    if len(scene.shapes) < 2:
        raise ValueError("need at least two shapes")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shapes = scene.shapes
    for _ in range(config.max_retries):
        i, j = rng.choice(len(shapes), size=2, replace=False)
        a, b = shapes[i], shapes[j]
        subj, obj = _random_descriptor(a, rng), _random_descriptor(b, rng)
        rels = [r for r in RELATIONS if (_delta(r, a, b) > 0) == bool(target_label)]
        rel = rels[rng.integers(len(rels))]
        truth, ambiguous = evaluate_caption(shapes, subj, rel, obj, config.tie_margin)
        if ambiguous or truth != bool(target_label):
            continue
        return CaptionSample(scene, caption_text(subj, rel, obj), bool(target_label))
    raise GenerationError(f"no caption with label {target_label} for this scene")


def generate_sample(seed, config=SceneConfig()):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    label = bool(rng.integers(2))
    for _ in range(config.max_retries):
        scene = render_scene(rng, config)
        try:
            return generate_caption(scene, rng, label, config)
        except GenerationError:
            continue
    raise GenerationError("could not generate a caption sample")


def generate_dataset(count, seed, config=SceneConfig()):
    return [generate_sample(np.random.default_rng([seed, i]), config) for i in range(count)]


def inject_pixel_noise(image, amount, seed, patch=8):
    """Overwrite ``amount`` random square patches with standard normal noise."""
    rng = np.random.default_rng(seed)
    out = image.copy()
    h, w, c = out.shape
    for _ in range(amount):
        r = int(rng.integers(0, h - patch + 1))
        q = int(rng.integers(0, w - patch + 1))
        out[r:r + patch, q:q + patch] = rng.standard_normal((patch, patch, c))
    return out


# -- persistence -------------------------------------------------------------
def save_dataset(samples, jsonl_path, bin_path):
    """Metadata as JSON lines plus a raw float64 little-endian image sidecar."""
    with open(jsonl_path, "w", encoding="utf-8") as meta, open(bin_path, "wb") as blob:
        for idx, s in enumerate(samples):
            img = np.ascontiguousarray(s.scene.image, dtype="<f8")
            rec = {
                "index": idx,
                "caption": s.caption,
                "label": bool(s.label),
                "shape": list(img.shape),
                "offset": blob.tell(),
                "shapes": [{"kind": p.kind, "color": p.color, "center": list(p.center), "size": p.size}
                           for p in s.scene.shapes],
            }
            blob.write(img.tobytes())
            meta.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_dataset(jsonl_path, bin_path):
    raw = np.fromfile(bin_path, dtype="<f8")
    out = []
    with open(jsonl_path, encoding="utf-8") as meta:
        for line in meta:
            if not line.strip():
                continue
            rec = json.loads(line)
            shape = tuple(rec["shape"])
            start = rec["offset"] // 8
            img = raw[start:start + int(np.prod(shape))].reshape(shape).astype(np.float64)
            shapes = [ShapeSpec(p["kind"], p["color"], tuple(p["center"]), p["size"]) for p in rec["shapes"]]
            out.append(CaptionSample(Scene(img, shapes), rec["caption"], bool(rec["label"])))
    return out


def write_ppm(image, path):
    """Binary P6 pixmap of an (H, W, 3) image with values in [0, 1]."""
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())
