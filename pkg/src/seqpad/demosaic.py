"""Bilinear Bayer demosaicing and a display-only color adjustment.

Mosaic layout, top-left origin::

    R G R G ...
    G B G B ...

Borders are mirrored without repeating the edge pixel (reflect-101), which
keeps the color class of every mirrored neighbour, so each site always has
its full set of same-color neighbours.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import DataError, RawFrame

GREEN_DISPLAY_GAIN = 0.58


@dataclass
class RgbFrame:
    pixels: np.ndarray  # (rows, cols, 3) uint8

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def bayer_channel_masks(height: int, width: int):
    """Boolean (R, G, B) site masks for the fixed RG/GB layout."""
    rows = np.arange(height)[:, None] % 2
    cols = np.arange(width)[None, :] % 2
    r = (rows == 0) & (cols == 0)
    b = (rows == 1) & (cols == 1)
    return r, ~(r | b), b


def demosaic_array(mosaic: np.ndarray) -> np.ndarray:
    """(H, W) uint8 mosaic -> (H, W, 3) uint8 RGB."""
    m = np.asarray(mosaic)
    if m.ndim != 2:
        raise DataError(f"mosaic must be 2-D, got shape {m.shape}")
    h, w = m.shape
    if h % 2 or w % 2:
        raise DataError(f"odd dimensions {m.shape}; demosaicing needs even height and width")
    if h < 2 or w < 2:
        raise DataError(f"frame too small: {m.shape}")
    p = np.pad(m.astype(np.int32), 1, mode="reflect")
    c = p[1:-1, 1:-1]
    horiz = p[1:-1, :-2] + p[1:-1, 2:]
    vert = p[:-2, 1:-1] + p[2:, 1:-1]
    diag = p[:-2, :-2] + p[:-2, 2:] + p[2:, :-2] + p[2:, 2:]
    # integer round-half-up of the neighbour means
    h2 = (horiz + 1) // 2
    v2 = (vert + 1) // 2
    cross4 = (horiz + vert + 2) // 4
    diag4 = (diag + 2) // 4

    out = np.empty((h, w, 3), dtype=np.int32)
    rr, gb_row = slice(0, None, 2), slice(1, None, 2)
    ev, od = slice(0, None, 2), slice(1, None, 2)
    # R sites
    out[rr, ev, 0] = c[rr, ev]
    out[rr, ev, 1] = cross4[rr, ev]
    out[rr, ev, 2] = diag4[rr, ev]
    # G sites on red rows
    out[rr, od, 0] = h2[rr, od]
    out[rr, od, 1] = c[rr, od]
    out[rr, od, 2] = v2[rr, od]
    # G sites on blue rows
    out[gb_row, ev, 0] = v2[gb_row, ev]
    out[gb_row, ev, 1] = c[gb_row, ev]
    out[gb_row, ev, 2] = h2[gb_row, ev]
    # B sites
    out[gb_row, od, 0] = diag4[gb_row, od]
    out[gb_row, od, 1] = cross4[gb_row, od]
    out[gb_row, od, 2] = c[gb_row, od]
    return np.clip(out, 0, 255).astype(np.uint8)


def demosaic_bilinear(frame: RawFrame) -> RgbFrame:
    pixels = frame.pixels if isinstance(frame, RawFrame) else np.asarray(frame)
    return RgbFrame(demosaic_array(pixels))


def mosaic(rgb: np.ndarray) -> np.ndarray:
    """Sample an (H, W, 3) image onto the Bayer layout (inverse direction of demosaicing)."""
    rgb = np.asarray(rgb)
    r, g, b = bayer_channel_masks(*rgb.shape[:2])
    out = np.where(r, rgb[..., 0], np.where(b, rgb[..., 2], rgb[..., 1]))
    return out.astype(rgb.dtype)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def reduce_green(pixels: np.ndarray, gain: float = GREEN_DISPLAY_GAIN) -> np.ndarray:
    out = np.asarray(pixels).astype(np.float64).copy()
    out[..., 1] = _round_half_up(out[..., 1] * gain)
    return np.clip(out, 0, 255).astype(np.uint8)


def equalize_value_channel(pixels: np.ndarray) -> np.ndarray:
    """Histogram-equalize V = max(R, G, B) and rescale RGB so hue and saturation stay fixed."""
    rgb = np.asarray(pixels, dtype=np.uint8)
    v = rgb.max(axis=2)
    hist = np.bincount(v.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    total = v.size
    cdf_min = cdf[hist > 0][0]
    if cdf_min == total:
        return rgb.copy()
    lut = _round_half_up((cdf - cdf_min) / (total - cdf_min) * 255.0)
    lut = np.clip(lut, 0, 255)
    v_new = lut[v]
    scale = np.divide(v_new, v, out=np.zeros(v.shape), where=v > 0)
    out = _round_half_up(rgb.astype(np.float64) * scale[..., None])
    return np.clip(out, 0, 255).astype(np.uint8)


def visualize(frame: RgbFrame) -> RgbFrame:
    """Green gain reduction followed by value equalization; for display only."""
    return RgbFrame(equalize_value_channel(reduce_green(frame.pixels)))
