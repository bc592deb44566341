import numpy as np
import pytest

from oracles import linear_interp_1d, reflect101
from seqpad.demosaic import RgbFrame
from seqpad.ingest import HALF_SPACE, NATIVE_SPACE, DataError, Minutia, MinutiaSet
from seqpad.minutiae import ReferenceSelection
from seqpad.patchseq import (crop_reflect, extract_patch_sequences, resize_bilinear, to_model_input,
                             whole_frame_sequence, window)


def _ref(points, space=NATIVE_SPACE):
    return ReferenceSelection(0, MinutiaSet([Minutia(x, y) for x, y in points], 0, space), [len(points)])


def _frames(rng, t=10, h=630, w=390):
    return [RgbFrame(rng.integers(0, 256, (h, w, 3), dtype=np.uint8)) for _ in range(t)]


def test_window_example():
    assert window(195, 219, 192) == (123, 315, 99, 291)


def test_k_sequences(rng):
    frames = _frames(rng, t=3, h=64, w=48)
    pts = [(int(a), int(b)) for a, b in zip(rng.integers(0, 48, 7), rng.integers(0, 64, 7))]
    seqs = extract_patch_sequences(frames, _ref(pts), size=16)
    assert len(seqs) == 7
    for s, (x, y) in zip(seqs, pts):
        assert len(s) == 3 and s.center == (x, y)
        assert all(p.shape == (16, 16, 3) for p in s.patches)


def test_native_center_patch(rng):
    frames = _frames(rng, t=2)
    (seq,) = extract_patch_sequences(frames, _ref([(195, 219)]), size=192)
    np.testing.assert_array_equal(seq.patches[1], frames[1].pixels[123:315, 99:291])


def test_border_patch_matches_reflect_oracle(rng):
    frames = _frames(rng, t=2, h=40, w=30)
    (seq,) = extract_patch_sequences(frames, _ref([(5, 5)]), size=24)
    img = frames[0].pixels
    expected = np.zeros((24, 24, 3), np.uint8)
    for i in range(24):
        for j in range(24):
            expected[i, j] = img[reflect101(5 - 12 + i, 40), reflect101(5 - 12 + j, 30)]
    np.testing.assert_array_equal(seq.patches[0], expected)


def test_window_wider_than_frame_folds_repeatedly(rng):
    img = rng.integers(0, 256, (6, 6, 3), dtype=np.uint8)
    out = crop_reflect(img, -10, 20, -10, 20)
    for i in range(30):
        for j in range(30):
            np.testing.assert_array_equal(out[i, j], img[reflect101(i - 10, 6), reflect101(j - 10, 6)])


def test_interior_patch_has_no_padding(rng):
    frames = _frames(rng, t=1, h=64, w=64)
    (seq,) = extract_patch_sequences(frames, _ref([(32, 32)]), size=32)
    np.testing.assert_array_equal(seq.patches[0], frames[0].pixels[16:48, 16:48])


def test_window_identical_across_frames():
    # each frame is black with a single watermark pixel whose location moves
    # with t; the watermark must shift in the patch exactly as in the frame
    h, w, t = 80, 60, 10
    frames = []
    for k in range(t):
        px = np.zeros((h, w, 3), np.uint8)
        px[30 + k, 20 + 2 * k] = (255, k, 0)
        frames.append(RgbFrame(px))
    (seq,) = extract_patch_sequences(frames, _ref([(30, 35)]), size=40)
    r0, _, c0, _ = window(30, 35, 40)
    for k, p in enumerate(seq.patches):
        (loc,) = np.argwhere(p[..., 0] == 255)
        assert tuple(loc) == (30 + k - r0, 20 + 2 * k - c0)
        assert p[loc[0], loc[1], 1] == k


def test_extract_errors(rng):
    frames = _frames(rng, t=2, h=32, w=32)
    with pytest.raises(DataError, match="empty"):
        extract_patch_sequences(frames, _ref([]), size=16)
    with pytest.raises(DataError):
        extract_patch_sequences(frames, _ref([(3, 3)], HALF_SPACE), size=16)
    with pytest.raises(DataError):
        extract_patch_sequences(frames, _ref([(3, 3)]), size=15)


def test_whole_frame_sequence(rng):
    frames = _frames(rng, t=10, h=16, w=12)
    seq = whole_frame_sequence(frames)
    assert len(seq) == 10
    for f, p in zip(frames, seq.patches):
        np.testing.assert_array_equal(f.pixels, p)
    x = to_model_input(seq, 8)
    assert x.shape == (10, 8, 8, 3)


def test_resize_constant():
    out = resize_bilinear(np.full((192, 192, 3), 77, np.uint8), 224)
    assert out.shape == (224, 224, 3)
    np.testing.assert_allclose(out, 77.0, atol=1e-9)


def test_resize_identity(rng):
    p = rng.integers(0, 256, (20, 20, 3), dtype=np.uint8)
    np.testing.assert_array_equal(resize_bilinear(p, 20), p.astype(np.float64))


def test_resize_2x2_to_4x4():
    p = np.zeros((2, 2, 3))
    p[:, 1] = 255
    out = resize_bilinear(p, 4)
    row = linear_interp_1d([0.0, 255.0], 4)
    for r in range(4):
        np.testing.assert_allclose(out[r, :, 0], row, atol=1e-12)


def test_resize_separable_oracle(rng):
    p = rng.integers(0, 256, (5, 7, 3)).astype(float)
    out = resize_bilinear(p, 9, 4)
    rows = np.array([linear_interp_1d(list(p[:, j, 0]), 9) for j in range(7)]).T  # (9, 7)
    full = np.array([linear_interp_1d(list(rows[i]), 4) for i in range(9)])
    np.testing.assert_allclose(out[..., 0], full, atol=1e-9)


def test_resize_range_preserved(rng):
    out = resize_bilinear(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8), 37)
    assert out.min() >= 0 and out.max() <= 255


@pytest.mark.parametrize("value,expected", [(255, 1.0), (0, 0.0)])
def test_to_model_input_scaling(value, expected):
    from seqpad.patchseq import PatchSequence
    seq = PatchSequence([np.full((192, 192, 3), value, np.uint8)] * 10, (0, 0))
    x = to_model_input(seq, 224)
    assert x.shape == (10, 224, 224, 3)
    assert np.all(x == expected)


def test_to_model_input_length_check():
    from seqpad.patchseq import PatchSequence
    seq = PatchSequence([np.zeros((8, 8, 3), np.uint8)] * 4, (0, 0))
    with pytest.raises(DataError):
        to_model_input(seq, 8, seq_len=10)
