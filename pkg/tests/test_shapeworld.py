import numpy as np
import pytest

from groundnet import shapeworld as sw
from groundnet.shapeworld import SceneConfig, ShapeSpec


def independent_truth(shapes, caption):
    """Re-derive a caption's truth value from the raw scene description."""
    words = caption.split()
    rel_words = {"left": "left", "right": "right", "above": "above", "below": "below"}
    rel_pos = next(i for i, w in enumerate(words) if w in rel_words)
    rel = rel_words[words[rel_pos]]
    subj = words[1:words.index("is")]
    obj_start = rel_pos + (2 if rel in ("left", "right") else 1)  # index of the article
    obj = words[obj_start + 1:]

    def parse(ws):
        color = next((w for w in ws if w in sw.COLORS), None)
        kind = next((w for w in ws if w in sw.SHAPES), None)
        return color, kind

    def ok(s, desc):
        c, k = desc
        return (c is None or s.color == c) and (k is None or s.kind == k)

    sd, od = parse(subj), parse(obj)
    for i, a in enumerate(shapes):
        for j, b in enumerate(shapes):
            if i == j or not ok(a, sd) or not ok(b, od):
                continue
            ax, ay = a.center
            bx, by = b.center
            if (rel == "left" and ax < bx) or (rel == "right" and ax > bx) or \
               (rel == "above" and ay < by) or (rel == "below" and ay > by):
                return True
    return False


def test_scene_invariants():
    for seed in range(200):
        scene = sw.render_scene(seed)
        assert 4 <= len(scene.shapes) <= 5
        assert scene.image.shape == (64, 64, 3)
        assert scene.image.min() >= 0 and scene.image.max() <= 1
        boxes = [s.bbox for s in scene.shapes]
        for i in range(len(boxes)):
            a = boxes[i]
            assert a[0] >= 0 and a[1] >= 0 and a[2] <= 64 and a[3] <= 64
            for j in range(i + 1, len(boxes)):
                b = boxes[j]
                overlap = a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]
                assert not overlap
        for s in scene.shapes:
            assert 10 <= s.size <= 16 and s.color in sw.COLORS and s.kind in sw.SHAPES


def test_scene_config_and_determinism():
    scene = sw.render_scene(3, SceneConfig(min_shapes=4, max_shapes=4))
    assert len(scene.shapes) == 4
    assert np.array_equal(sw.render_scene(11).image, sw.render_scene(11).image)
    with pytest.raises(sw.GenerationError):
        sw.render_scene(0, SceneConfig(size=20, min_shapes=5, max_shapes=5, max_retries=2))


def test_caption_examples():
    shapes = [ShapeSpec("circle", "red", (10.0, 30.0), 12), ShapeSpec("pentagon", "blue", (50.0, 30.0), 12)]
    assert sw.evaluate_caption(shapes, (None, "circle"), "to the left of", (None, "pentagon"))[0] is True
    assert sw.evaluate_caption(shapes, (None, "circle"), "to the right of", (None, "pentagon"))[0] is False
    assert sw.caption_text((None, "circle"), "to the left of", (None, "pentagon")) == \
        "a circle is to the left of a pentagon"
    assert sw.describe("red", None) == "a red shape"
    assert sw.describe(None, "ellipse") == "an ellipse"


def test_generate_caption_requires_two_shapes():
    scene = sw.Scene(np.zeros((64, 64, 3)), [ShapeSpec("circle", "red", (10.0, 10.0), 10)])
    with pytest.raises(ValueError):
        sw.generate_caption(scene, 0, True)


def test_labels_match_independent_checker():
    data = sw.generate_dataset(1000, 4)
    for s in data:
        assert independent_truth(s.scene.shapes, s.caption) == s.label


def test_class_balance():
    labels = [sw.generate_sample(np.random.default_rng([99, i])).label for i in range(10_000)]
    assert abs(np.mean(labels) - 0.5) < 0.02


def test_no_near_ties_in_captions():
    for s in sw.generate_dataset(200, 8):
        words = s.caption.split(" is ")
        assert words  # caption well formed
    # near-tie detection flags pairs closer than the margin
    shapes = [ShapeSpec("circle", "red", (10.0, 30.0), 12), ShapeSpec("square", "blue", (11.0, 50.0), 12)]
    assert sw.evaluate_caption(shapes, (None, "circle"), "to the left of", (None, "square"))[1] is True


def test_dataset_files_round_trip(tmp_path):
    data = sw.generate_dataset(6, 2)
    sw.save_dataset(data, tmp_path / "a.jsonl", tmp_path / "a.bin")
    assert (tmp_path / "a.bin").stat().st_size == 6 * 64 * 64 * 3 * 8
    back = sw.load_dataset(tmp_path / "a.jsonl", tmp_path / "a.bin")
    for a, b in zip(data, back):
        assert a.caption == b.caption and a.label == b.label
        assert np.array_equal(a.scene.image, b.scene.image)
        assert a.scene.shapes == b.scene.shapes


def test_ppm_export(tmp_path):
    img = sw.render_scene(1).image
    sw.write_ppm(img, tmp_path / "s.ppm")
    raw = (tmp_path / "s.ppm").read_bytes()
    assert raw.startswith(b"P6\n64 64\n255\n")
    pixels = np.frombuffer(raw[len(b"P6\n64 64\n255\n"):], dtype=np.uint8).reshape(64, 64, 3)
    assert np.array_equal(pixels, np.round(img * 255).astype(np.uint8))


def test_pixel_noise_patches():
    img = np.zeros((64, 64, 3))
    noisy = sw.inject_pixel_noise(img, 3, seed=0)
    assert noisy.shape == img.shape and (noisy != 0).any()
    assert np.array_equal(sw.inject_pixel_noise(img, 0, seed=0), img)
