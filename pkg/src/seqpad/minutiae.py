"""Classical minutiae detection and reference-frame selection.

Detection runs on a half-resolution luma image: local normalization, Otsu
binarization (dark pixels are ridge), Zhang-Suen thinning, then crossing
numbers on the skeleton. Coordinates come back in half-resolution space and
are doubled by :func:`to_native` before patches are cut.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .demosaic import RgbFrame
from .ingest import HALF_SPACE, NATIVE_SPACE, DataError, Minutia, MinutiaSet

log = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])
ENDING, BIFURCATION = 1, 3

# neighbour offsets P2..P9, clockwise from north
_RING = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


@dataclass
class DetectorParams:
    block_size: int = 16
    prune_dist: float = 8.0
    border_margin: int = 12

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorParams":
        unknown = set(d) - {"block_size", "prune_dist", "border_margin"}
        if unknown:
            raise DataError(f"unknown detector keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class ReferenceSelection:
    reference_index: int
    reference_minutiae: MinutiaSet
    per_frame_counts: List[int] = field(default_factory=list)


class NoMinutiaeError(DataError):
    pass


def downscale_half(frame) -> np.ndarray:
    """Luma of an RGB frame, reduced 2x by 2x2 block averaging (float64)."""
    rgb = frame.pixels if isinstance(frame, RgbFrame) else np.asarray(frame)
    h, w = rgb.shape[:2]
    if h % 2 or w % 2:
        raise DataError(f"odd dimensions {rgb.shape[:2]} cannot be halved")
    gray = rgb[..., :3].astype(np.float64) @ LUMA
    return gray.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def normalize_local(gray: np.ndarray, block_size: int) -> np.ndarray:
    g = gray.astype(np.float64)
    mu = uniform_filter(g, size=block_size, mode="reflect")
    var = uniform_filter(g * g, size=block_size, mode="reflect") - mu * mu
    return (g - mu) / np.sqrt(np.maximum(var, 0.0) + 1e-6)


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return float(lo)
    hist, edges = np.histogram(v, bins=bins, range=(lo, hi))
    centers = (edges[:-1] + edges[1:]) / 2
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    s0 = np.cumsum(hist * centers)
    m0 = s0 / np.maximum(w0, 1)
    m1 = (s0[-1] - s0) / np.maximum(w1, 1)
    between = w0 * w1 * (m0 - m1) ** 2
    return float(edges[1:][np.argmax(between)])


def _neighbours(img: np.ndarray) -> List[np.ndarray]:
    p = np.pad(img, 1)
    h, w = img.shape
    return [p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] for dy, dx in _RING]


def zhang_suen_pass(img: np.ndarray) -> int:
    """One Zhang-Suen iteration (both sub-steps) in place; returns pixels removed."""
    removed = 0
    for step in (0, 1):
        n = [x.astype(np.int32) for x in _neighbours(img)]
        p2, p3, p4, p5, p6, p7, p8, p9 = n
        count = sum(n)
        seq = n + [n[0]]
        transitions = sum(((seq[i] == 0) & (seq[i + 1] == 1)).astype(np.int32) for i in range(8))
        if step == 0:
            c1 = p2 * p4 * p6 == 0
            c2 = p4 * p6 * p8 == 0
        else:
            c1 = p2 * p4 * p8 == 0
            c2 = p2 * p6 * p8 == 0
        kill = img & (count >= 2) & (count <= 6) & (transitions == 1) & c1 & c2
        k = int(kill.sum())
        if k:
            img[kill] = False
            removed += k
    return removed


def thin(binary: np.ndarray, max_iter: int = 1000) -> np.ndarray:
    img = np.asarray(binary, dtype=bool).copy()
    for _ in range(max_iter):
        if zhang_suen_pass(img) == 0:
            break
    return img


def crossing_number(neighbours: Sequence[int]) -> int:
    """Half the summed absolute differences around the 8-neighbour cycle P2..P9, P2."""
    v = [int(bool(x)) for x in neighbours]
    return sum(abs(v[i] - v[(i + 1) % 8]) for i in range(8)) // 2


def crossing_numbers(skeleton: np.ndarray) -> np.ndarray:
    n = [x.astype(np.int32) for x in _neighbours(np.asarray(skeleton, dtype=bool))]
    total = sum(np.abs(n[i] - n[(i + 1) % 8]) for i in range(8))
    return total // 2


def _prune(points: List[tuple], dist: float) -> List[tuple]:
    if dist <= 0 or len(points) < 2:
        return points
    xy = np.array([(p[0], p[1]) for p in points], dtype=float)
    d = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
    np.fill_diagonal(d, np.inf)
    keep = ~(d < dist).any(axis=1)
    return [p for p, k in zip(points, keep) if k]


def detect_minutiae_cn(gray: np.ndarray, params: DetectorParams = DetectorParams(),
                       frame_index: int = 0) -> MinutiaSet:
    """Ridge endings (CN=1) and bifurcations (CN=3) in half-resolution space.

    A constant image yields an empty set carrying the ``"degenerate"`` flag.
    Use :func:`detect_with_types` to also get the crossing number per minutia.
    """
    return detect_with_types(gray, params, frame_index)[0]


def detect_with_types(gray: np.ndarray, params: DetectorParams = DetectorParams(), frame_index: int = 0):
    g = np.asarray(gray, dtype=np.float64)
    if g.ndim != 2 or min(g.shape) < 32:
        raise DataError(f"detector needs a 2-D image of at least 32x32, got {g.shape}")
    empty = MinutiaSet([], frame_index, HALF_SPACE)
    if np.ptp(g) < 1e-9:
        log.warning("frame %d: constant intensity, no minutiae", frame_index)
        empty.flags.append("degenerate")
        return empty, []
    norm = normalize_local(g, params.block_size)
    ridges = norm < otsu_threshold(norm)
    skel = thin(ridges)
    cn = crossing_numbers(skel)
    m = params.border_margin
    h, w = g.shape
    inside = np.zeros_like(skel)
    inside[m:h - m, m:w - m] = True
    cand = skel & inside & ((cn == ENDING) | (cn == BIFURCATION))
    ys, xs = np.nonzero(cand)
    points = [(float(x), float(y), int(cn[y, x])) for y, x in zip(ys, xs)]
    points = _prune(points, params.prune_dist)
    mset = MinutiaSet([Minutia(x, y) for x, y, _ in points], frame_index, HALF_SPACE)
    return mset, [t for _, _, t in points]


def to_native(mset: MinutiaSet) -> MinutiaSet:
    if mset.coordinate_space != HALF_SPACE:
        raise DataError(f"to_native expects {HALF_SPACE} coordinates, got {mset.coordinate_space}")
    return MinutiaSet([Minutia(2 * m.x, 2 * m.y, m.theta, m.quality) for m in mset.minutiae],
                      mset.frame_index, NATIVE_SPACE)


def to_half(mset: MinutiaSet) -> MinutiaSet:
    if mset.coordinate_space != NATIVE_SPACE:
        raise DataError(f"to_half expects {NATIVE_SPACE} coordinates, got {mset.coordinate_space}")
    return MinutiaSet([Minutia(m.x / 2, m.y / 2, m.theta, m.quality) for m in mset.minutiae],
                      mset.frame_index, HALF_SPACE)


def select_reference(sets: Sequence[MinutiaSet]) -> ReferenceSelection:
    """Pick the frame with the most minutiae; ties go to the earliest frame."""
    if not sets:
        raise NoMinutiaeError("no minutiae sets given")
    spaces = {s.coordinate_space for s in sets}
    if len(spaces) != 1:
        raise DataError(f"minutiae sets mix coordinate spaces {sorted(spaces)}")
    counts = [len(s) for s in sets]
    best = max(counts)
    if best == 0:
        raise NoMinutiaeError("no minutiae in any frame")
    idx = counts.index(best)
    ref = sets[idx]
    if ref.coordinate_space == HALF_SPACE:
        ref = to_native(ref)
    ref = MinutiaSet(list(ref.minutiae), idx, ref.coordinate_space)
    return ReferenceSelection(idx, ref, counts)


def detect_sequence(frames: Sequence[RgbFrame], params: DetectorParams = DetectorParams()) -> ReferenceSelection:
    """Detect on every frame and select the reference frame (native coordinates)."""
    sets = [detect_minutiae_cn(downscale_half(f), params, i) for i, f in enumerate(frames)]
    return select_reference(sets)
