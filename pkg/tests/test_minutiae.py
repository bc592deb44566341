import itertools

import numpy as np
import pytest

from oracles import block_mean_oracle, transitions_0_to_1
from seqpad.demosaic import RgbFrame, demosaic_array
from seqpad.ingest import HALF_SPACE, NATIVE_SPACE, DataError, Minutia, MinutiaSet
from seqpad.minutiae import (BIFURCATION, ENDING, DetectorParams, NoMinutiaeError, crossing_number,
                             crossing_numbers, detect_minutiae_cn, detect_sequence, detect_with_types,
                             downscale_half, select_reference, thin, to_half, to_native, zhang_suen_pass)
from seqpad.synthgen import SynthParams, generate_presentation

# P2..P9 clockwise from north, as (dy, dx)
RING = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def test_crossing_number_all_256_patterns():
    for bits in itertools.product((0, 1), repeat=8):
        expected = transitions_0_to_1(bits)
        assert crossing_number(bits) == expected
        patch = np.zeros((3, 3), bool)
        patch[1, 1] = True
        for (dy, dx), b in zip(RING, bits):
            patch[1 + dy, 1 + dx] = bool(b)
        assert crossing_numbers(patch)[1, 1] == expected


def test_single_neighbour_is_ending():
    assert crossing_number([0, 0, 1, 0, 0, 0, 0, 0]) == ENDING


def test_three_branches_is_bifurcation():
    assert crossing_number([1, 0, 0, 1, 0, 1, 0, 0]) == BIFURCATION


def _blobs(rng, shape=(48, 48)):
    img = np.zeros(shape, bool)
    for _ in range(6):
        r, c = rng.integers(4, shape[0] - 12, 2)
        img[r:r + rng.integers(3, 9), c:c + rng.integers(3, 12)] = True
    return img


def test_thinning_subset_and_converged(rng):
    for _ in range(10):
        img = _blobs(rng)
        skel = thin(img)
        assert not (skel & ~img).any()
        assert skel.any()
        again = skel.copy()
        assert zhang_suen_pass(again) == 0  # termination criterion: nothing more to delete
        np.testing.assert_array_equal(again, skel)


def test_thinning_thick_bar_is_one_pixel_wide():
    img = np.zeros((20, 40), bool)
    img[7:13, 5:35] = True
    skel = thin(img)
    cols = skel[:, 10:30].sum(axis=0)
    assert (cols == 1).all()


def test_downscale_constant():
    out = downscale_half(RgbFrame(np.full((8, 6, 3), 100, np.uint8)))
    assert out.shape == (4, 3)
    np.testing.assert_allclose(out, 100.0)


def test_downscale_native_shape():
    assert downscale_half(np.zeros((630, 390, 3), np.uint8)).shape == (315, 195)


def test_downscale_block_oracle(rng):
    rgb = np.zeros((8, 8, 3), np.uint8)
    checker = (np.add.outer(np.arange(8) // 2, np.arange(8) // 2) % 2) * 255
    rgb[...] = checker[..., None]
    np.testing.assert_allclose(downscale_half(rgb), block_mean_oracle(checker * 1.0), atol=1e-9)
    rgb = rng.integers(0, 256, (10, 12, 3), dtype=np.uint8)
    gray = rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114
    np.testing.assert_allclose(downscale_half(rgb), block_mean_oracle(gray), atol=1e-9)


def test_downscale_odd():
    with pytest.raises(DataError):
        downscale_half(np.zeros((7, 8, 3), np.uint8))


def test_detector_requires_32():
    with pytest.raises(DataError, match="32x32"):
        detect_minutiae_cn(np.zeros((31, 64)))


def test_constant_image_flagged():
    mset = detect_minutiae_cn(np.full((64, 64), 7.0))
    assert len(mset) == 0 and "degenerate" in mset.flags
    assert mset.coordinate_space == HALF_SPACE


def _half_gray(pres, t=0):
    return downscale_half(demosaic_array(pres.sequence.frames[t].pixels))


def test_implanted_termination_is_found():
    hits = 0
    for seed in range(10):
        p = SynthParams(seed=seed, label="spoof", blanching_ramp=1.0, spot_growth=0.0, jitter=0,
                        num_minutiae=1, height=128, width=128, edge_margin=40)
        pres = generate_presentation(p, material="gelatin")
        gx, gy = pres.minutiae.minutiae[0].x / 2, pres.minutiae.minutiae[0].y / 2
        mset, kinds = detect_with_types(_half_gray(pres))
        near = [k for m, k in zip(mset.minutiae, kinds) if np.hypot(m.x - gx, m.y - gy) <= 5]
        hits += bool(near)
    assert hits == 10


def test_synthetic_recall():
    found = total = 0
    for seed in range(5):
        pres = generate_presentation(SynthParams(seed=seed, label="live"))
        mset = detect_minutiae_cn(_half_gray(pres))
        for g in pres.minutiae.minutiae:
            total += 1
            found += any(np.hypot(m.x - g.x / 2, m.y - g.y / 2) <= 5 for m in mset.minutiae)
    assert found / total >= 0.9


def test_params_from_dict():
    assert DetectorParams.from_dict({"block_size": 8}).block_size == 8
    with pytest.raises((ValueError, DataError)):
        DetectorParams.from_dict({"blocksize": 8})


def _set(points, space=HALF_SPACE, frame=0):
    return MinutiaSet([Minutia(x, y) for x, y in points], frame, space)


def test_to_native_examples():
    out = to_native(_set([(10, 20), (0, 0)]))
    assert [(m.x, m.y) for m in out.minutiae] == [(20, 40), (0, 0)]
    assert out.coordinate_space == NATIVE_SPACE


def test_to_native_round_trip_and_order(rng):
    pts = [(2 * int(a), 2 * int(b)) for a, b in rng.integers(0, 190, (20, 2))]
    s = _set(pts, NATIVE_SPACE, 3)
    assert to_native(to_half(s)) == s


def test_to_native_wrong_space():
    with pytest.raises(DataError):
        to_native(_set([(1, 1)], NATIVE_SPACE))


def _sets_with_counts(counts):
    return [_set([(i, i) for i in range(c)], frame=f) for f, c in enumerate(counts)]


@pytest.mark.parametrize("counts,idx", [([3, 9, 9, 2], 1), ([5, 12, 7], 1), ([4, 0, 0], 0), ([0, 0, 1], 2)])
def test_select_reference(counts, idx):
    sel = select_reference(_sets_with_counts(counts))
    assert sel.reference_index == idx
    assert sel.per_frame_counts == counts
    assert sel.reference_minutiae.frame_index == idx
    assert sel.reference_minutiae.coordinate_space == NATIVE_SPACE
    assert len(sel.reference_minutiae) == counts[idx]


def test_select_reference_all_empty():
    with pytest.raises(NoMinutiaeError, match="no minutiae in any frame"):
        select_reference(_sets_with_counts([0] * 10))


def test_select_reference_permutation_covariant(rng):
    for _ in range(50):
        counts = list(rng.integers(0, 5, 6))
        if max(counts) == 0:
            continue
        perm = rng.permutation(6)
        sel = select_reference(_sets_with_counts(counts)).reference_index
        permuted = [counts[i] for i in perm]
        psel = select_reference(_sets_with_counts(permuted)).reference_index
        # the permuted argmax maps back to a frame with the maximal count,
        # and is the earliest such position in the permuted order
        assert counts[perm[psel]] == counts[sel] == max(counts)
        assert psel == min(j for j in range(6) if permuted[j] == max(counts))


def test_detect_sequence_native_space():
    pres = generate_presentation(SynthParams(seed=3, label="live", frames=3))
    frames = [RgbFrame(demosaic_array(f.pixels)) for f in pres.sequence.frames]
    sel = detect_sequence(frames)
    assert sel.reference_minutiae.coordinate_space == NATIVE_SPACE
    assert sel.per_frame_counts[sel.reference_index] == max(sel.per_frame_counts)
    sel.reference_minutiae.check_bounds(*pres.sequence.shape)


def test_single_line_termination_is_an_ending():
    # dark horizontal ridges every 9 px; the middle one stops at column 40
    img = np.full((80, 80), 200.0)
    for r in range(4, 80, 9):
        img[r:r + 4, :] = 40.0
    mid = 4 + 9 * 4
    img[mid:mid + 4, 40:] = 200.0
    mset, kinds = detect_with_types(img)
    endings = [m for m, k in zip(mset.minutiae, kinds) if k == ENDING]
    assert any(np.hypot(m.x - 40, m.y - (mid + 1.5)) <= 5 for m in endings)
