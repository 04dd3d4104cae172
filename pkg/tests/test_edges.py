import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from saspa.edges import (
    EdgeMap,
    HedDetector,
    auto_thresholds,
    extract_canny_edges,
    load_edge_map,
    resize_shortest_side,
    save_edge_map,
)


@pytest.mark.parametrize(
    "w, h, expected",
    [(1024, 768, (683, 512)), (512, 512, (512, 512)), (256, 512, (512, 1024)), (768, 1024, (512, 683))],
)
def test_resize_shortest_side(w, h, expected):
    out = resize_shortest_side(np.zeros((h, w, 3), np.uint8))
    assert (out.shape[1], out.shape[0]) == expected


def test_resize_identity_returns_same_object():
    img = np.zeros((512, 700), np.uint8)
    assert resize_shortest_side(img) is img


def test_resize_zero_dimension():
    with pytest.raises(ValueError):
        resize_shortest_side(np.zeros((0, 10, 3), np.uint8))


def test_constant_image_has_no_edges():
    e = extract_canny_edges(np.full((40, 50, 3), 120, np.uint8))
    assert e.data.shape == (40, 50)
    assert not e.data.any()


def _sobel_nms_oracle(gray):
    """Horizontal-gradient Canny by hand: 3x3 Sobel with replicated borders, then NMS.

    NMS keeps a pixel whose magnitude is strictly greater than its left neighbour
    and at least its right neighbour (the usual tie rule for symmetric steps).
    """
    g = np.pad(gray.astype(np.int64), 1, mode="edge")
    gx = ((g[:-2, 2:] + 2 * g[1:-1, 2:] + g[2:, 2:]) - (g[:-2, :-2] + 2 * g[1:-1, :-2] + g[2:, :-2]))
    mag = np.abs(gx)
    left = np.pad(mag, ((0, 0), (1, 0)))[:, :-1]
    right = np.pad(mag, ((0, 0), (0, 1)))[:, 1:]
    return (mag > left) & (mag >= right) & (mag > 0)


def test_step_image_single_column():
    img = np.zeros((32, 32), np.uint8)
    img[:, 16:] = 255
    expected = _sobel_nms_oracle(img)
    assert np.array_equal(np.nonzero(expected.any(axis=0))[0], [15])
    e = extract_canny_edges(img, 50, 150)
    assert np.array_equal(e.data > 0, expected)


@pytest.mark.parametrize("shape", [(20, 30), (20, 30, 1), (20, 30, 3)])
def test_output_is_one_channel_binary(shape):
    rng = np.random.default_rng(0)
    e = extract_canny_edges(rng.integers(0, 256, size=shape, dtype=np.uint8))
    assert e.data.ndim == 1 + 1
    assert set(np.unique(e.data)) <= {0, 255}


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), shift=st.integers(-40, 40))
def test_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    img = rng.integers(60, 196, size=(24, 24), dtype=np.uint8)
    a = extract_canny_edges(img, 40, 100).data
    b = extract_canny_edges((img.astype(int) + shift).astype(np.uint8), 40, 100).data
    assert np.array_equal(a, b)


def test_auto_thresholds():
    assert auto_thresholds(np.full((5, 5), 120, np.uint8)) == (79, 159)
    assert auto_thresholds(np.zeros((5, 5), np.uint8)) == (0, 0)
    assert auto_thresholds(np.full((5, 5, 3), 255, np.uint8)) == (168, 255)


def test_invalid_thresholds():
    img = np.zeros((8, 8), np.uint8)
    with pytest.raises(ValueError):
        extract_canny_edges(img, 100, 50)
    with pytest.raises(ValueError):
        extract_canny_edges(img, 10, None)


def test_edge_map_roundtrip(tmp_path):
    img = np.zeros((16, 16), np.uint8)
    img[:, 8:] = 200
    e = extract_canny_edges(img, 50, 150, source_image_id="a1")
    path = save_edge_map(e, tmp_path)
    assert path.name == "a1.edge.png"
    assert np.array_equal(load_edge_map(tmp_path, "a1").data, e.data)


def test_edge_map_rejects_multichannel():
    with pytest.raises(ValueError):
        EdgeMap(np.zeros((4, 4, 3), np.uint8))


def test_hed_adapter():
    det = HedDetector(lambda im: np.full(im.shape[:2], 0.5))
    e = det(np.zeros((6, 7, 3), np.uint8), "x")
    assert e.detector == "hed" and e.data.shape == (6, 7) and int(e.data[0, 0]) == 128
    with pytest.raises(ValueError):
        HedDetector(lambda im: np.zeros((2, 2)))(np.zeros((6, 7, 3), np.uint8))
