import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spgnn import boxes as bx

import oracles


def test_iou_examples():
    assert bx.iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)
    assert bx.iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert bx.iou((0, 0, 2, 2), (5, 5, 6, 6)) == 0.0
    assert bx.iou((0, 0, 2, 2), (2, 0, 4, 2)) == 0.0     # touching edges
    with pytest.raises(ValueError):
        bx.iou((0, 0, 0, 2), (0, 0, 1, 1))


def _random_boxes(rng, n, span=100.0):
    xy = rng.uniform(0, span, (n, 2))
    wh = rng.uniform(1, span / 2, (n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def test_iou_matrix_matches_scalar_reference():
    rng = np.random.default_rng(0)
    a, b = _random_boxes(rng, 30), _random_boxes(rng, 20)
    m = bx.iou_matrix(a, b)
    for i in range(30):
        for j in range(20):
            assert m[i, j] == pytest.approx(oracles.box_iou(a[i], b[j]), abs=1e-12)


def test_nms_examples():
    assert bx.nms([[0, 0, 4, 4]], [0.3], 0.5).tolist() == [0]
    same = [[0, 0, 4, 4]] * 3
    assert bx.nms(same, [0.2, 0.9, 0.5], 0.5).tolist() == [1]
    assert bx.nms(same, [0.5, 0.5, 0.5], 0.5).tolist() == [0]          # tie goes to the lower index
    assert bx.nms(np.zeros((0, 4)), np.zeros(0), 0.5).tolist() == []
    with pytest.raises(ValueError):
        bx.nms(same, [0.1], 0.5)


def test_nms_matches_reference():
    rng = np.random.default_rng(1)
    for trial in range(150):
        n = int(rng.integers(1, 21))
        boxes = _random_boxes(rng, n, span=40.0)
        scores = rng.choice([0.1, 0.5, 0.9], n) if trial % 2 else rng.uniform(size=n)
        thresh = float(rng.choice([0.3, 0.5, 0.7]))
        assert bx.nms(boxes, scores, thresh).tolist() == oracles.nms(boxes.tolist(), list(scores), thresh)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_encode_decode_roundtrip(seed):
    rng = np.random.default_rng(seed)
    b, a = _random_boxes(rng, 10), _random_boxes(rng, 10)
    for stds in ((1.0, 1.0, 1.0, 1.0), (0.1, 0.1, 0.2, 0.2)):
        back = bx.decode(bx.encode(b, a, stds), a, stds)
        np.testing.assert_allclose(back, b, rtol=0, atol=1e-9)


def test_zero_deltas_decode_to_anchor():
    a = np.array([[3.0, 4.0, 20.0, 11.0]])
    np.testing.assert_allclose(bx.decode(np.zeros((1, 4)), a), a, rtol=0, atol=1e-12)
    assert not bx.encode(a, a).any()


def test_decode_clamps_log_scale():
    a = np.array([[0.0, 0.0, 16.0, 16.0]])
    out = bx.decode(np.array([[0.0, 0.0, 50.0, 50.0]]), a)
    assert np.isfinite(out).all()
    assert out[0, 2] - out[0, 0] == pytest.approx(1000.0)


def test_conversions_and_clip():
    b = np.array([[1.0, 2.0, 5.0, 9.0]])
    assert bx.xyxy_to_xywh(b).tolist() == [[1.0, 2.0, 4.0, 7.0]]
    assert bx.xywh_to_xyxy(bx.xyxy_to_xywh(b)).tolist() == b.tolist()
    assert bx.clip([[-3, -1, 50, 7]], 6, 40).tolist() == [[0, 0, 40, 6]]
    assert bx.area(b).tolist() == [28.0]
