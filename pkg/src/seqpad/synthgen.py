"""Synthetic Bayer frame sequences with known minutiae and tunable liveness cues.

Ridges are an oriented, gently wavy sinusoid whose phase carries one
spiral singularity per minutia, which produces a ridge ending or
bifurcation at that point. Live presentations add two temporal cues: the
red channel fades frame by frame (blanching) and bright spots grow near
some minutiae (perspiration). Spoofs are static apart from translation
jitter. Frames are rendered in RGB and sampled onto the Bayer layout.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .demosaic import mosaic
from .ingest import (NATIVE_SPACE, FrameSequence, Manifest, Minutia, MinutiaSet, PresentationRecord,
                     RawFrame, save_sequence, write_manifest, write_minutiae)

log = logging.getLogger(__name__)

VALLEY_RGB = np.array([215.0, 200.0, 185.0])
RIDGE_RGB = np.array([150.0, 85.0, 75.0])


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class SynthParams:
    seed: int = 0
    label: str = "live"
    height: int = 256
    width: int = 192
    frames: int = 10
    ridge_period: float = 18.0
    base_angle: Optional[float] = None  # radians; drawn from the seed when None
    waviness: float = 0.6  # phase amplitude (radians) of the low-frequency bend
    num_minutiae: int = 6
    min_spacing: float = 40.0
    edge_margin: float = 36.0
    blanching_ramp: float = 0.95  # per-frame red attenuation factor
    perspiration_spots: int = 2
    spot_growth: float = 0.8  # spot radius gain, pixels per frame
    spot_strength: float = 0.7
    jitter: int = 1  # max per-frame translation, pixels
    noise: float = 0.0  # sensor noise std, intensity levels
    color_variation: float = 0.08

    def __post_init__(self):
        if self.label not in ("live", "spoof"):
            raise ValueError(f"label must be live or spoof, got {self.label!r}")
        if self.height % 2 or self.width % 2:
            raise ValueError("frame dimensions must be even")
        if self.frames < 2:
            raise ValueError("need at least 2 frames")
        if self.label == "spoof" and (self.blanching_ramp != 1.0 or self.spot_growth != 0.0):
            raise ValueError("spoof presentations carry no blanching ramp or perspiration growth")

    def as_spoof(self) -> "SynthParams":
        return replace(self, label="spoof", blanching_ramp=1.0, spot_growth=0.0)


def strong_cues(**kw) -> SynthParams:
    return SynthParams(blanching_ramp=0.9, perspiration_spots=3, spot_growth=1.0, jitter=0, **kw)


def hard_cues(**kw) -> SynthParams:
    return SynthParams(blanching_ramp=0.985, perspiration_spots=1, spot_growth=0.5, spot_strength=0.4,
                       jitter=2, noise=3.0, color_variation=0.15, **kw)


@dataclass
class SynthPresentation:
    sequence: FrameSequence
    minutiae: MinutiaSet  # ground truth, native space, unjittered frame 0
    record: PresentationRecord
    rgb: List[np.ndarray]  # pre-mosaic renders, float64


def _place_minutiae(rng: np.random.Generator, p: SynthParams) -> np.ndarray:
    pts: List[Tuple[float, float]] = []
    lo_x, hi_x = p.edge_margin, p.width - p.edge_margin
    lo_y, hi_y = p.edge_margin, p.height - p.edge_margin
    if p.num_minutiae and (hi_x <= lo_x or hi_y <= lo_y):
        raise CapacityError("frame too small for the edge margin")
    tries = 0
    while len(pts) < p.num_minutiae:
        tries += 1
        if tries > 20000:
            raise CapacityError(f"could not place {p.num_minutiae} minutiae {p.min_spacing} px apart "
                                f"in a {p.height}x{p.width} frame")
        x = rng.uniform(lo_x, hi_x)
        y = rng.uniform(lo_y, hi_y)
        if all(np.hypot(x - a, y - b) >= p.min_spacing for a, b in pts):
            pts.append((round(x), round(y)))
    return np.array(pts, dtype=float).reshape(-1, 2)


def _ridge_phase(xx, yy, angle, k, wave_amp, wave_len, pts, signs):
    u = xx * np.cos(angle) + yy * np.sin(angle)
    v = -xx * np.sin(angle) + yy * np.cos(angle)
    phase = k * u + wave_amp * np.sin(2 * np.pi * v / wave_len)
    for (mx, my), s in zip(pts, signs):
        phase = phase + s * np.arctan2(yy - my, xx - mx)
    return phase


def generate_presentation(params: SynthParams, presentation_id: str = "synth",
                          subject_id: str = "s000", material: Optional[str] = None,
                          material_variant: Optional[str] = None) -> SynthPresentation:
    p = params
    rng = np.random.default_rng(p.seed)
    angle = rng.uniform(0, np.pi) if p.base_angle is None else p.base_angle
    k = 2 * np.pi / p.ridge_period
    wave_len = rng.uniform(1.5, 3.0) * max(p.height, p.width)
    pts = _place_minutiae(rng, p)
    signs = np.where(np.arange(len(pts)) % 2 == 0, 1.0, -1.0)
    tint = 1.0 + rng.uniform(-p.color_variation, p.color_variation, size=3)
    valley = np.clip(VALLEY_RGB * tint, 0, 255)
    ridge = np.clip(RIDGE_RGB * tint, 0, 255)
    n_spots = min(p.perspiration_spots, len(pts))
    spot_centers = pts[:n_spots] + rng.uniform(-4, 4, size=(n_spots, 2))
    offsets = [(0, 0)] + [tuple(rng.integers(-p.jitter, p.jitter + 1, size=2)) if p.jitter else (0, 0)
                          for _ in range(p.frames - 1)]
    noise_rng = np.random.default_rng(rng.integers(2**63))

    yy, xx = np.mgrid[0:p.height, 0:p.width].astype(np.float64)
    frames, renders = [], []
    for t, (dx, dy) in enumerate(offsets):
        fx, fy = xx - dx, yy - dy
        phase = _ridge_phase(fx, fy, angle, k, p.waviness, wave_len, pts, signs)
        dark = (1.0 + np.clip(3.0 * np.cos(phase), -1.0, 1.0)) / 2.0
        rgb = valley * (1.0 - dark[..., None]) + ridge * dark[..., None]
        rgb[..., 0] *= p.blanching_ramp ** t
        radius = p.spot_growth * t
        if radius > 0:
            for cx, cy in spot_centers:
                blob = p.spot_strength * np.exp(-((fx - cx) ** 2 + (fy - cy) ** 2) / (2 * radius ** 2))
                rgb += (255.0 - rgb) * blob[..., None]
        if p.noise > 0:
            rgb = rgb + noise_rng.normal(0.0, p.noise, size=rgb.shape)
        rgb = np.clip(rgb, 0, 255)
        renders.append(rgb)
        frames.append(RawFrame(mosaic(np.floor(rgb + 0.5).astype(np.uint8))))

    seq = FrameSequence(frames, presentation_id=presentation_id)
    gt = MinutiaSet([Minutia(float(x), float(y), None, None) for x, y in pts], 0, NATIVE_SPACE)
    record = PresentationRecord(presentation_id, subject_id, p.label,
                                material if p.label == "spoof" else None,
                                material_variant if p.label == "spoof" else None)
    return SynthPresentation(seq, gt, record, renders)


def _derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def generate_dataset(n_live: int, n_spoof: int, subjects: int, materials: int, seed: int,
                     out_dir, hard: bool = False, base: Optional[SynthParams] = None,
                     variants_per_material: int = 2) -> Manifest:
    """Write ``n_live + n_spoof`` presentations plus ``manifest.jsonl`` under ``out_dir``.

    Live presentations cycle over ``subjects`` subject ids; spoofs cycle over
    ``materials`` synthetic materials, each with ``variants_per_material``
    variants. Every presentation directory also gets its ground-truth
    minutiae as ``minutiae.csv``.
    """
    if min(n_live, n_spoof, subjects, materials) < 0:
        raise ValueError("counts must be non-negative")
    if n_live and subjects < 1:
        raise ValueError("live presentations need at least one subject")
    if n_spoof and materials < 1:
        raise ValueError("spoof presentations need at least one material")
    out = Path(out_dir)
    (out / "presentations").mkdir(parents=True, exist_ok=True)
    live_p = base or (hard_cues() if hard else strong_cues())
    records = []
    for i in range(n_live + n_spoof):
        is_live = i < n_live
        j = i if is_live else i - n_live
        pid = f"{'live' if is_live else 'spoof'}_{j:04d}"
        params = replace(live_p, seed=_derived_seed(seed, i))
        if is_live:
            pres = generate_presentation(params, pid, subject_id=f"subj_{j % subjects:03d}")
        else:
            mat = f"material_{j % materials}"
            variant = f"{mat}/v{(j // materials) % variants_per_material}"
            pres = generate_presentation(params.as_spoof(), pid, subject_id=f"batch_{j % max(materials * 3, 1):03d}",
                                         material=mat, material_variant=variant)
        rel = Path("presentations") / pid
        save_sequence(pres.sequence, out / rel)
        write_minutiae(pres.minutiae, out / rel / "minutiae.csv")
        pres.record.path = rel.as_posix()
        records.append(pres.record)
    manifest = Manifest(records, root=out)
    write_manifest(manifest, out / "manifest.jsonl")
    (out / "synth.json").write_text(json.dumps({"seed": seed, "hard": hard, "params": asdict(live_p)},
                                               indent=2, sort_keys=True) + "\n")
    log.info("wrote %d presentations to %s", len(records), out)
    return manifest
