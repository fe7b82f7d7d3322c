import json

import numpy as np
import pytest

from spgnn.imageio import read_image, read_pgm16, read_ppm, write_pgm16, write_ppm
from spgnn.nn import make_rng
from spgnn.synth import (CLASSES, SyntheticSpec, ground_truth_json, load_dataset, mask_box, render_sample,
                         synth_generate, synth_samples)


def test_generation_is_byte_identical(tmp_path):
    spec = SyntheticSpec(seed=4, size=64, n=3)
    a, b = synth_generate(spec, tmp_path / "a"), synth_generate(spec, tmp_path / "b")
    for name in ["gt.json"] + [f"images/{i:06d}.ppm" for i in range(3)]:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    other = synth_generate(SyntheticSpec(seed=5, size=64, n=3), tmp_path / "c")
    assert (other / "images/000000.ppm").read_bytes() != (a / "images/000000.ppm").read_bytes()


def test_annotation_count_and_tight_boxes():
    samples = synth_samples(SyntheticSpec(seed=0, size=224, n=8))
    assert sum(len(s.boxes) for s in samples) >= 8
    for s in samples:
        assert s.pixels.shape == (3, 224, 224)
        assert s.pixels.min() >= 0 and s.pixels.max() <= 1
        assert np.array_equal(np.round(s.pixels * 255) / 255, s.pixels)
        assert set(s.classes.tolist()) <= set(range(1, len(CLASSES) + 1))
        for box, mask in zip(s.boxes, s.masks):
            assert mask.any()
            assert np.array_equal(box, mask_box(mask))
            x1, y1, x2, y2 = box.astype(int)
            assert mask[y1:y2, x1:x2].sum() == mask.sum()


def test_mask_box_example():
    m = np.zeros((6, 8), bool)
    m[2:4, 3:7] = True
    assert mask_box(m).tolist() == [3.0, 2.0, 7.0, 4.0]


def test_every_class_renders():
    rng = make_rng(0)
    seen = set()
    for _ in range(40):
        _, defects = render_sample(rng, 96, 2)
        seen.update(c for c, _ in defects)
    assert seen == set(range(1, 6))


def test_dataset_roundtrip(tmp_path):
    spec = SyntheticSpec(seed=1, size=64, n=2, min_defects=2, max_defects=2)
    root = synth_generate(spec, tmp_path)
    gt = json.loads((root / "gt.json").read_text())
    assert gt == ground_truth_json(synth_samples(spec))
    assert len(gt["annotations"]) == 4 and len(gt["categories"]) == 5
    back = load_dataset(root)
    for s, t in zip(synth_samples(spec), back):
        assert np.array_equal(s.pixels, t.pixels)
        assert np.array_equal(s.boxes, t.boxes) and np.array_equal(s.classes, t.classes)


def test_ppm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    write_ppm(tmp_path / "x.ppm", img)
    back = read_ppm(tmp_path / "x.ppm")
    assert back.shape == (3, 5, 7)
    assert np.array_equal(np.round(back * 255).astype(np.uint8).transpose(1, 2, 0), img)
    assert np.array_equal(read_image(tmp_path / "x.ppm"), back)
    # comments in the header are skipped
    raw = (tmp_path / "x.ppm").read_bytes().replace(b"P6\n", b"P6\n# made by hand\n", 1)
    (tmp_path / "y.ppm").write_bytes(raw)
    assert np.array_equal(read_ppm(tmp_path / "y.ppm"), back)


def test_pgm16_roundtrip(tmp_path):
    labels = np.arange(12).reshape(3, 4) * 5000
    write_pgm16(tmp_path / "l.pgm", labels)
    assert np.array_equal(read_pgm16(tmp_path / "l.pgm"), labels)
    with pytest.raises(ValueError):
        write_pgm16(tmp_path / "bad.pgm", np.array([[70000]]))
    with pytest.raises(ValueError):
        read_ppm(tmp_path / "l.pgm")


def test_png_through_pillow(tmp_path):
    from PIL import Image
    img = np.random.default_rng(1).integers(0, 256, (6, 9, 3), dtype=np.uint8)
    Image.fromarray(img).save(tmp_path / "x.png")
    assert np.array_equal(read_image(tmp_path / "x.png"), img.transpose(2, 0, 1) / 255.0)
