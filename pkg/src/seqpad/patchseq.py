"""Minutiae-centred patch sequences and model-input preparation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .demosaic import RgbFrame
from .ingest import NATIVE_SPACE, DataError
from .minutiae import ReferenceSelection


@dataclass
class PatchSequence:
    patches: List[np.ndarray]  # T arrays of (S, S, 3) uint8, or full frames in whole-frame mode
    center: Optional[Tuple[int, int]]  # native (x, y); None for whole-frame sequences
    presentation_id: str = ""
    label: Optional[str] = None

    def __len__(self) -> int:
        return len(self.patches)

    def array(self) -> np.ndarray:
        return np.stack(self.patches)


def window(x: float, y: float, size: int) -> Tuple[int, int, int, int]:
    """Crop window ``(row0, row1, col0, col1)``; the centre pixel sits at index ``size // 2``."""
    cx, cy = int(round(x)), int(round(y))
    half = size // 2
    return cy - half, cy - half + size, cx - half, cx - half + size


def reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Reflect-101 index mapping for any integer index, including repeated folds."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def crop_reflect(image: np.ndarray, row0: int, row1: int, col0: int, col1: int) -> np.ndarray:
    rows = reflect_index(np.arange(row0, row1), image.shape[0])
    cols = reflect_index(np.arange(col0, col1), image.shape[1])
    return image[np.ix_(rows, cols)]


def extract_patch_sequences(frames: Sequence[RgbFrame], ref: ReferenceSelection, size: int = 192,
                            presentation_id: str = "", label: Optional[str] = None) -> List[PatchSequence]:
    """One sequence per reference minutia, cut with the same window from every frame.

    Windows that run past the frame are completed by reflect-101 padding.
    """
    if size <= 0 or size % 2:
        raise DataError(f"patch size must be a positive even number, got {size}")
    mset = ref.reference_minutiae
    if mset.coordinate_space != NATIVE_SPACE:
        raise DataError("reference minutiae must be in native space")
    if len(mset) == 0:
        raise DataError("reference minutiae set is empty")
    images = [f.pixels if isinstance(f, RgbFrame) else np.asarray(f) for f in frames]
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise DataError("frames differ in size")
    out = []
    for m in mset.minutiae:
        r0, r1, c0, c1 = window(m.x, m.y, size)
        patches = [crop_reflect(im, r0, r1, c0, c1) for im in images]
        out.append(PatchSequence(patches, (int(round(m.x)), int(round(m.y))), presentation_id, label))
    return out


def whole_frame_sequence(frames: Sequence[RgbFrame], presentation_id: str = "",
                         label: Optional[str] = None) -> PatchSequence:
    if not frames:
        raise DataError("whole-frame mode needs at least one frame")
    images = [f.pixels if isinstance(f, RgbFrame) else np.asarray(f) for f in frames]
    return PatchSequence(list(images), None, presentation_id, label)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) corner-aligned linear interpolation weights."""
    m = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    m[np.arange(n_out), lo] = 1.0 - frac
    m[np.arange(n_out), lo + 1] += frac
    return m


def resize_bilinear(patch: np.ndarray, height: int, width: Optional[int] = None) -> np.ndarray:
    """Per-channel bilinear resize with sample positions ``i * (n_in - 1) / (n_out - 1)``.

    Returns float64 in the input's value range; same-size resizing returns
    the input values unchanged.
    """
    width = height if width is None else width
    if height <= 0 or width <= 0:
        raise ValueError("target size must be positive")
    img = np.asarray(patch, dtype=np.float64)
    if img.shape[:2] == (height, width):
        return img.copy()
    rows = _interp_matrix(img.shape[0], height)
    cols = _interp_matrix(img.shape[1], width)
    return np.einsum("ij,jkc,lk->ilc", rows, img, cols, optimize=True)


def to_model_input(seq: PatchSequence, input_size: int, seq_len: Optional[int] = None) -> np.ndarray:
    """(T, H, W, 3) float64 array in [0, 1]."""
    if seq_len is not None and len(seq) != seq_len:
        raise DataError(f"sequence has {len(seq)} frames, model expects {seq_len}")
    arr = np.stack([resize_bilinear(p, input_size) for p in seq.patches]) / 255.0
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite model input")
    return arr
