"""Presentation directories, dataset manifests and minutiae files.

On-disk layout of one presentation::

    <dir>/frame_00.pgm ... frame_{T-1}.pgm   8-bit binary PGM (P5)
    <dir>/meta.json                          {presentation_id, fps, ppi, frame_count, device_capture}
    <dir>/minutiae.csv                       optional externally supplied minutiae

The manifest is JSON lines, one :class:`PresentationRecord` per line.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

NATIVE_HEIGHT = 630
NATIVE_WIDTH = 390
NATIVE_FRAME_COUNT = 10

NATIVE_SPACE = "native_1000ppi"
HALF_SPACE = "half_500ppi"
_SPACE_SCALE = {NATIVE_SPACE: 1.0, HALF_SPACE: 0.5}


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class RawFrame:
    pixels: np.ndarray  # (rows, cols) uint8, RG/GB Bayer mosaic with R at (0, 0)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise DataError(f"raw frame must be 2-D, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise DataError("raw frame values must lie in [0, 255]")
            px = px.astype(np.uint8)
        if px.shape[0] % 2 or px.shape[1] % 2:
            raise DataError(f"odd frame dimensions {px.shape}; the Bayer layout needs even height and width")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class FrameSequence:
    frames: List[RawFrame]
    presentation_id: str = ""
    fps: float = 8.0
    ppi: int = 1000
    device_capture: bool = False

    def __post_init__(self):
        if len(self.frames) < 2:
            raise DataError(f"a sequence needs at least 2 frames, got {len(self.frames)}")
        shape = self.frames[0].pixels.shape
        for i, f in enumerate(self.frames):
            if f.pixels.shape != shape:
                raise DataError(f"dimension mismatch: frame {i} is {f.pixels.shape}, frame 0 is {shape}")
        if self.device_capture:
            if shape != (NATIVE_HEIGHT, NATIVE_WIDTH):
                raise DataError(f"device captures must be {NATIVE_HEIGHT}x{NATIVE_WIDTH}, got {shape}")
            if len(self.frames) != NATIVE_FRAME_COUNT:
                raise DataError(f"device captures hold {NATIVE_FRAME_COUNT} frames, got {len(self.frames)}")

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> tuple:
        return self.frames[0].pixels.shape


@dataclass
class PresentationRecord:
    presentation_id: str
    subject_id: str
    label: str  # "live" or "spoof"
    material: Optional[str] = None
    material_variant: Optional[str] = None
    path: str = ""

    def __post_init__(self):
        if self.label not in ("live", "spoof"):
            raise DataError(f"{self.presentation_id}: label must be 'live' or 'spoof', got {self.label!r}")
        if self.label == "live" and (self.material or self.material_variant):
            raise DataError(f"{self.presentation_id}: live record carries material {self.material!r}")
        if self.label == "spoof" and not self.material:
            raise DataError(f"{self.presentation_id}: spoof record without material")
        if self.label == "live" and not self.subject_id:
            raise DataError(f"{self.presentation_id}: live record without subject_id")

    @property
    def is_spoof(self) -> bool:
        return self.label == "spoof"


@dataclass
class Manifest:
    records: List[PresentationRecord]
    root: Optional[Path] = None

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.presentation_id in seen:
                raise DataError(f"duplicate presentation_id {r.presentation_id!r}")
            seen.add(r.presentation_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict:
        return {r.presentation_id: r for r in self.records}

    def live(self) -> List[PresentationRecord]:
        return [r for r in self.records if r.label == "live"]

    def spoof(self) -> List[PresentationRecord]:
        return [r for r in self.records if r.label == "spoof"]

    def materials(self) -> List[str]:
        return sorted({r.material for r in self.records if r.material})

    def resolve(self, record: PresentationRecord) -> Path:
        p = Path(record.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p


@dataclass
class Minutia:
    x: float
    y: float
    theta: Optional[float] = None
    quality: Optional[float] = None


@dataclass
class MinutiaSet:
    minutiae: List[Minutia] = field(default_factory=list)
    frame_index: int = 0
    coordinate_space: str = NATIVE_SPACE
    flags: List[str] = field(default_factory=list, compare=False)

    def __post_init__(self):
        if self.coordinate_space not in _SPACE_SCALE:
            raise DataError(f"unknown coordinate space {self.coordinate_space!r}")

    def __len__(self) -> int:
        return len(self.minutiae)

    def xy(self) -> np.ndarray:
        return np.array([(m.x, m.y) for m in self.minutiae], dtype=float).reshape(-1, 2)

    def check_bounds(self, height: int, width: int) -> None:
        """``height``/``width`` are native frame dimensions."""
        s = _SPACE_SCALE[self.coordinate_space]
        for m in self.minutiae:
            if not (0 <= m.x < width * s and 0 <= m.y < height * s):
                raise DataError(
                    f"minutia ({m.x}, {m.y}) outside {self.coordinate_space} bounds "
                    f"{width * s:g} x {height * s:g}")


# -- PGM / PPM -----------------------------------------------------------------

def _read_netpbm(path: Path, magic: bytes) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != magic:
        raise DataError(f"{path}: expected {magic.decode()} file, got {tokens[0]!r}")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    n = width * height * channels
    body = data[pos:pos + n]
    if len(body) != n:
        raise DataError(f"{path}: expected {n} pixel bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape((height, width, 3) if channels == 3 else (height, width)).copy()


def read_pgm(path) -> np.ndarray:
    return _read_netpbm(Path(path), b"P5")


def read_ppm(path) -> np.ndarray:
    return _read_netpbm(Path(path), b"P6")


def write_pgm(path, image: np.ndarray) -> None:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise DataError(f"PGM needs a 2-D image, got {img.shape}")
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]) + img.tobytes())


def write_ppm(path, image: np.ndarray) -> None:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"PPM needs an (H, W, 3) image, got {img.shape}")
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]) + img.tobytes())


# -- presentations -------------------------------------------------------------

def frame_filename(index: int) -> str:
    return f"frame_{index:02d}.pgm"


def load_sequence(path) -> FrameSequence:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise DataError(f"{path}: missing meta.json")
    meta = json.loads(meta_path.read_text())
    count = int(meta.get("frame_count", NATIVE_FRAME_COUNT))
    frames = []
    for i in range(count):
        fp = path / frame_filename(i)
        if not fp.exists():
            raise DataError(f"{path}: missing frame {fp.name}")
        frames.append(RawFrame(read_pgm(fp)))
    return FrameSequence(
        frames=frames,
        presentation_id=str(meta.get("presentation_id", path.name)),
        fps=float(meta.get("fps", 8.0)),
        ppi=int(meta.get("ppi", 1000)),
        device_capture=bool(meta.get("device_capture", False)),
    )


def save_sequence(seq: FrameSequence, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(seq.frames):
        write_pgm(path / frame_filename(i), f.pixels)
    meta = {
        "presentation_id": seq.presentation_id,
        "fps": seq.fps,
        "ppi": seq.ppi,
        "frame_count": seq.frame_count,
        "device_capture": seq.device_capture,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


# -- manifest ------------------------------------------------------------------

_RECORD_KEYS = ("presentation_id", "subject_id", "label", "material", "material_variant", "path")


def load_manifest(path) -> Manifest:
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: unreadable record ({exc.msg})") from None
        if not isinstance(obj, dict) or "presentation_id" not in obj or "label" not in obj:
            raise DataError(f"{path}:{lineno}: record needs presentation_id and label")
        unknown = set(obj) - set(_RECORD_KEYS)
        if unknown:
            raise DataError(f"{path}:{lineno}: unknown fields {sorted(unknown)}")
        records.append(PresentationRecord(
            presentation_id=str(obj["presentation_id"]),
            subject_id=str(obj.get("subject_id") or ""),
            label=obj["label"],
            material=obj.get("material"),
            material_variant=obj.get("material_variant"),
            path=str(obj.get("path", "")),
        ))
    return Manifest(records, root=path.parent)


def write_manifest(manifest: Manifest, path) -> None:
    lines = [json.dumps({k: getattr(r, k) for k in _RECORD_KEYS}) for r in manifest.records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# -- minutiae files ------------------------------------------------------------

_MINUTIAE_HEADER = ["frame", "x", "y", "theta", "quality"]


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.6f}"


def write_minutiae(mset: MinutiaSet, path) -> None:
    buf = io.StringIO()
    buf.write(f"# space={mset.coordinate_space} frame={mset.frame_index}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_MINUTIAE_HEADER)
    for m in mset.minutiae:
        w.writerow([mset.frame_index, _fmt(m.x), _fmt(m.y), _fmt(m.theta), _fmt(m.quality)])
    Path(path).write_text(buf.getvalue())


def read_minutiae_frames(path, frame_shape: Optional[tuple] = None) -> List[MinutiaSet]:
    """Read a minutiae CSV that may hold several frames; one set per frame index.

    ``frame_shape`` is the native (height, width) used for the bounds check.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    space, header_frame = NATIVE_SPACE, None
    body = []
    for line in lines:
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                if key == "space":
                    space = val
                elif key == "frame":
                    header_frame = int(val)
        elif line.strip():
            body.append(line)
    if not body or next(csv.reader([body[0]])) != _MINUTIAE_HEADER:
        raise DataError(f"{path}: expected header {','.join(_MINUTIAE_HEADER)}")
    sets = {}
    for lineno, row in enumerate(csv.reader(body[1:]), 2):
        if len(row) != len(_MINUTIAE_HEADER):
            raise DataError(f"{path}: malformed line {lineno}: {row}")
        try:
            frame = int(row[0])
            m = Minutia(float(row[1]), float(row[2]),
                        float(row[3]) if row[3] else None,
                        float(row[4]) if row[4] else None)
        except ValueError:
            raise DataError(f"{path}: malformed line {lineno}: {row}") from None
        if not all(math.isfinite(v) for v in (m.x, m.y)):
            raise DataError(f"{path}: non-finite coordinate on line {lineno}")
        sets.setdefault(frame, MinutiaSet([], frame, space)).minutiae.append(m)
    if not sets:
        sets[header_frame or 0] = MinutiaSet([], header_frame or 0, space)
    out = [sets[k] for k in sorted(sets)]
    if frame_shape is not None:
        for s in out:
            s.check_bounds(*frame_shape)
    return out


def read_minutiae(path, frame_shape: tuple = (NATIVE_HEIGHT, NATIVE_WIDTH)) -> MinutiaSet:
    sets = read_minutiae_frames(path, frame_shape)
    if len(sets) != 1:
        raise DataError(f"{path}: holds minutiae for {len(sets)} frames; use read_minutiae_frames")
    return sets[0]
