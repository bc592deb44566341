import numpy as np
import pytest
from scipy.ndimage import maximum_filter, minimum_filter

from seqpad.demosaic import demosaic_array
from seqpad.ingest import load_manifest, load_sequence, read_minutiae
from seqpad.minutiae import detect_minutiae_cn, downscale_half
from seqpad.synthgen import (CapacityError, SynthParams, generate_dataset, generate_presentation, hard_cues,
                             strong_cues)

SMALL = dict(height=96, width=96, frames=4, num_minutiae=2, min_spacing=20, edge_margin=30)


def _rgb(pres):
    return [demosaic_array(f.pixels) for f in pres.sequence.frames]


def test_same_seed_identical():
    a = generate_presentation(SynthParams(seed=11, **SMALL))
    b = generate_presentation(SynthParams(seed=11, **SMALL))
    for fa, fb in zip(a.sequence.frames, b.sequence.frames):
        np.testing.assert_array_equal(fa.pixels, fb.pixels)
    assert a.minutiae == b.minutiae
    c = generate_presentation(SynthParams(seed=12, **SMALL))
    assert not np.array_equal(a.sequence.frames[0].pixels, c.sequence.frames[0].pixels)


def test_spoof_without_jitter_is_static():
    p = SynthParams(seed=3, label="spoof", blanching_ramp=1.0, spot_growth=0.0, jitter=0, **SMALL)
    frames = generate_presentation(p, material="m").sequence.frames
    for f in frames[1:]:
        np.testing.assert_array_equal(f.pixels, frames[0].pixels)


def test_spoof_with_jitter_differs_by_translation():
    p = SynthParams(seed=3, label="spoof", blanching_ramp=1.0, spot_growth=0.0, jitter=2, **SMALL)
    renders = generate_presentation(p, material="m").rgb
    base = renders[0]
    for r in renders[1:]:
        ok = False
        for dy in range(-2, 3):
            for dx in range(-2, 3):
                shifted = np.roll(base, (dy, dx), axis=(0, 1))
                if np.allclose(shifted[4:-4, 4:-4], r[4:-4, 4:-4]):
                    ok = True
        assert ok


def test_spoof_params_validated():
    with pytest.raises(ValueError):
        SynthParams(label="spoof")
    assert SynthParams().as_spoof().blanching_ramp == 1.0


def test_live_red_decreases():
    pres = generate_presentation(SynthParams(seed=5, blanching_ramp=0.95, **SMALL))
    means = [rgb[..., 0].mean() for rgb in _rgb(pres)]
    assert all(b < a for a, b in zip(means, means[1:]))


def test_capacity_error():
    with pytest.raises(CapacityError):
        generate_presentation(SynthParams(num_minutiae=50, min_spacing=60))


def test_dataset_layout(tmp_path):
    m = generate_dataset(8, 8, subjects=4, materials=2, seed=0, out_dir=tmp_path,
                         base=strong_cues(**SMALL))
    assert len(m) == 16 and len(m.materials()) == 2
    assert len({r.subject_id for r in m.live()}) == 4
    back = load_manifest(tmp_path / "manifest.jsonl")
    assert [r.presentation_id for r in back] == [r.presentation_id for r in m]
    for r in back:
        seq = load_sequence(back.resolve(r))
        assert seq.frame_count == 4 and seq.shape == (96, 96)
        assert len(read_minutiae(back.resolve(r) / "minutiae.csv", seq.shape)) == 2


def test_mosaic_demosaic_consistency_on_smooth_regions():
    pres = generate_presentation(SynthParams(seed=2))
    for t in (0, 5, 9):
        truth = np.floor(pres.rgb[t] + 0.5)
        flat = np.ones(truth.shape[:2], bool)
        for k in range(3):
            rng_ = maximum_filter(truth[..., k], size=5) - minimum_filter(truth[..., k], size=5)
            flat &= rng_ <= 2  # nothing ridge-like within 2 px
        assert flat.mean() > 0.1  # enough smooth area for the check to mean something
        err = np.abs(demosaic_array(pres.sequence.frames[t].pixels).astype(float) - truth)
        assert err[flat].mean() <= 4


def _temporal_red_variance(pres):
    red = np.stack([rgb[..., 0].astype(float) for rgb in _rgb(pres)])
    return red.var(axis=0).mean()


def test_strong_cues_separable_by_red_variance():
    live = [_temporal_red_variance(generate_presentation(strong_cues(seed=s, **SMALL))) for s in range(8)]
    spoof = [_temporal_red_variance(generate_presentation(strong_cues(seed=s, **SMALL).as_spoof(),
                                                          material="m")) for s in range(8)]
    assert min(live) > max(spoof)


def test_hard_cues_are_weaker():
    strong = generate_presentation(strong_cues(seed=1, **SMALL))
    hard = generate_presentation(hard_cues(seed=1, **SMALL))
    r = lambda p: [rgb[..., 0].mean() for rgb in _rgb(p)]  # noqa: E731
    assert (r(strong)[0] - r(strong)[-1]) > 2 * (r(hard)[0] - r(hard)[-1])


def test_detector_recall_on_generated_frames():
    found = total = 0
    for s in range(6):
        pres = generate_presentation(SynthParams(seed=100 + s))
        for t in (0, 9):
            mset = detect_minutiae_cn(downscale_half(demosaic_array(pres.sequence.frames[t].pixels)))
            for g in pres.minutiae.minutiae:
                total += 1
                # ground truth is for the unjittered frame; allow for the jitter
                found += any(np.hypot(m.x - g.x / 2, m.y - g.y / 2) <= 5 for m in mset.minutiae)
    assert found / total >= 0.7
