"""Square/disk images with a texture confound.

Images are 100x100 arrays with values in {0, 0.5, 1}.  Pixel ``[i, j]``
pairs ``i`` with the center's ``cx`` and ``j`` with ``cy``.  In the clean
distribution squares are textured and disks are plain; the adversarial
distribution swaps the texture onto the disks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .framework import UNCERTAIN

__all__ = [
    "SIZE",
    "DISK",
    "SQUARE",
    "ShapeSpec",
    "ShapeImage",
    "ShapeDataset",
    "DatasetFormatError",
    "render_shape",
    "sample_spec",
    "gen_dataset",
    "save_dataset",
    "load_dataset",
    "export_pgm",
    "import_pgm",
    "shape_teacher",
]

SIZE = 100
R_MIN, R_MAX = 12, 25
DISK, SQUARE = 0, 1
CLEAN, ADVERSARIAL = "clean", "adversarial"

_MAGIC = b"SHD1"
_VERSION = 1
_HEADER = struct.Struct("<4sBBIHH")
_RECORD = struct.Struct("<BBBBB")
_TAGS = {CLEAN: 0, ADVERSARIAL: 1}
_ENCODE = {0.0: 0, 0.5: 128, 1.0: 255}
_DECODE = np.full(256, np.nan)
_DECODE[[0, 128, 255]] = [0.0, 0.5, 1.0]


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    r: int
    cx: int
    cy: int
    textured: bool = False

    def __post_init__(self):
        if self.kind not in ("square", "disk"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if not R_MIN <= self.r <= R_MAX:
            raise ValueError(f"size {self.r} outside [{R_MIN}, {R_MAX}]")
        hi = SIZE - 1 - self.r
        if not (self.r <= self.cx <= hi and self.r <= self.cy <= hi):
            raise ValueError(f"shape at ({self.cx}, {self.cy}) with r={self.r} leaves the frame")

    @property
    def label(self) -> int:
        return SQUARE if self.kind == "square" else DISK


@dataclass(frozen=True)
class ShapeImage:
    pixels: np.ndarray
    spec: ShapeSpec


def _support(kind: str, r: int, cx: int, cy: int) -> np.ndarray:
    i = np.arange(SIZE)[:, None]
    j = np.arange(SIZE)[None, :]
    if kind == "square":
        return (np.abs(i - cx) <= r) & (np.abs(j - cy) <= r)
    return (i - cx) ** 2 + (j - cy) ** 2 <= r * r


def render_shape(spec: ShapeSpec) -> ShapeImage:
    inside = _support(spec.kind, spec.r, spec.cx, spec.cy)
    pixels = inside.astype(float)
    if spec.textured:
        i = np.arange(SIZE)[:, None]
        j = np.arange(SIZE)[None, :]
        pixels[inside & ((i + j) % 2 == 0)] = 0.5
    return ShapeImage(pixels, spec)


def sample_spec(kind: str, rng: np.random.Generator, textured: bool = False) -> ShapeSpec:
    r = int(rng.integers(R_MIN, R_MAX + 1))
    cx, cy = (int(v) for v in rng.integers(r, SIZE - r, size=2))
    return ShapeSpec(kind, r, cx, cy, textured)


@dataclass
class ShapeDataset:
    pixels: np.ndarray  # (n, 100, 100) float
    labels: np.ndarray  # (n,) int, DISK or SQUARE
    specs: list
    dist_tag: str = CLEAN

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, k) -> ShapeImage:
        return ShapeImage(self.pixels[k], self.specs[k])

    def __eq__(self, other):
        return (
            isinstance(other, ShapeDataset)
            and self.dist_tag == other.dist_tag
            and self.specs == other.specs
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.pixels, other.pixels)
        )


def _is_textured(label: int, dist_tag: str) -> bool:
    if dist_tag == CLEAN:
        return label == SQUARE
    if dist_tag == ADVERSARIAL:
        return label == DISK
    raise ValueError(f"unknown distribution tag {dist_tag!r}")


def gen_dataset(count: int, dist_tag: str = CLEAN, balance: str = "exact", seed: int = 0) -> ShapeDataset:
    """Sample ``count`` images.

    ``balance="exact"`` gives ``count // 2`` of each class in shuffled order;
    ``"bernoulli"`` flips a fair coin per image.  Every image draws from its
    own stream seeded by ``(seed, index)``, so clean and adversarial sets
    built with one seed share their geometry and differ only in texture.
    """
    if balance == "exact":
        if count % 2:
            raise ValueError(f"exact balance needs an even count, got {count}")
        labels = np.repeat([DISK, SQUARE], count // 2)
        np.random.default_rng([seed, 1]).shuffle(labels)
    elif balance == "bernoulli":
        labels = np.random.default_rng([seed, 2]).integers(0, 2, size=count)
    else:
        raise ValueError(f"unknown balance mode {balance!r}")
    _is_textured(DISK, dist_tag)

    pixels = np.empty((count, SIZE, SIZE))
    specs = []
    for k, label in enumerate(labels):
        rng = np.random.default_rng([seed, 0, k])
        kind = "square" if label == SQUARE else "disk"
        spec = sample_spec(kind, rng, _is_textured(int(label), dist_tag))
        pixels[k] = render_shape(spec).pixels
        specs.append(spec)
    return ShapeDataset(pixels, labels.astype(np.int64), specs, dist_tag)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


class DatasetFormatError(ValueError):
    pass


def _encode_pixels(pixels: np.ndarray) -> bytes:
    out = np.zeros(pixels.shape, dtype=np.uint8)
    matched = np.zeros(pixels.shape, dtype=bool)
    for value, code in _ENCODE.items():
        hit = pixels == value
        out[hit] = code
        matched |= hit
    if not matched.all():
        bad = tuple(int(v) for v in np.argwhere(~matched)[0])
        raise ValueError(f"pixel {bad} has value {pixels[bad]!r}, not in {{0, 0.5, 1}}")
    return out.tobytes()


def save_dataset(ds: ShapeDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, _TAGS[ds.dist_tag], len(ds), SIZE, SIZE))
        for label, spec, pixels in zip(ds.labels, ds.specs, ds.pixels):
            fh.write(_RECORD.pack(int(label), int(spec.textured), spec.r, spec.cx, spec.cy))
            fh.write(_encode_pixels(pixels))


def load_dataset(path) -> ShapeDataset:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DatasetFormatError(f"truncated header: {len(data)} bytes, need {_HEADER.size}")
    magic, version, tag, count, height, width = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r} at offset 0")
    if version != _VERSION:
        raise DatasetFormatError(f"unsupported version {version} at offset 4")
    tags = {v: k for k, v in _TAGS.items()}
    if tag not in tags:
        raise DatasetFormatError(f"unknown distribution tag {tag} at offset 5")
    if (height, width) != (SIZE, SIZE):
        raise DatasetFormatError(f"unsupported image size {height}x{width} at offset 10")

    stride = _RECORD.size + SIZE * SIZE
    expected = _HEADER.size + count * stride
    if len(data) != expected:
        raise DatasetFormatError(
            f"file holds {len(data)} bytes, header promises {expected} for {count} images"
        )
    pixels = np.empty((count, SIZE, SIZE))
    labels = np.empty(count, dtype=np.int64)
    specs = []
    for k in range(count):
        offset = _HEADER.size + k * stride
        label, textured, r, cx, cy = _RECORD.unpack_from(data, offset)
        if label not in (DISK, SQUARE) or textured not in (0, 1):
            raise DatasetFormatError(f"image {k}: bad label/texture byte at offset {offset}")
        try:
            spec = ShapeSpec("square" if label == SQUARE else "disk", r, cx, cy, bool(textured))
        except ValueError as exc:
            raise DatasetFormatError(f"image {k}: invalid spec at offset {offset}: {exc}") from None
        raw = np.frombuffer(data, dtype=np.uint8, count=SIZE * SIZE, offset=offset + _RECORD.size)
        decoded = _DECODE[raw]
        if np.isnan(decoded).any():
            pos = int(np.flatnonzero(np.isnan(decoded))[0])
            raise DatasetFormatError(
                f"image {k}: pixel byte {raw[pos]} at offset {offset + _RECORD.size + pos} "
                "is not one of 0, 128, 255"
            )
        pixels[k] = decoded.reshape(SIZE, SIZE)
        labels[k] = label
        specs.append(spec)
    return ShapeDataset(pixels, labels, specs, tags[tag])


def export_pgm(image, path) -> None:
    """Binary PGM with maxval 255 using the map 0 -> 0, 0.5 -> 128, 1 -> 255."""
    pixels = image.pixels if isinstance(image, ShapeImage) else np.asarray(image, dtype=float)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_encode_pixels(pixels))


def import_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise DatasetFormatError(f"{path}: not a binary PGM with maxval 255")
    w, h = (int(v) for v in parts[1].split())
    raw = np.frombuffer(parts[3], dtype=np.uint8)
    if raw.size != w * h:
        raise DatasetFormatError(f"{path}: expected {w * h} pixel bytes, found {raw.size}")
    decoded = _DECODE[raw]
    if np.isnan(decoded).any():
        pos = int(np.flatnonzero(np.isnan(decoded))[0])
        raise DatasetFormatError(f"{path}: pixel byte {raw[pos]} at index {pos} is not 0, 128 or 255")
    return decoded.reshape(h, w)


# ---------------------------------------------------------------------------
# Teacher
# ---------------------------------------------------------------------------


def shape_teacher(pixels):
    """Label an image by the geometry of its nonzero pixels only.

    SQUARE if the support is a filled axis-aligned square, DISK if it equals
    a rasterized disk, UNCERTAIN otherwise.  Texture never changes the
    support, so the label ignores it.
    """
    inside = np.asarray(pixels) > 0
    if inside.shape != (SIZE, SIZE) or not inside.any():
        return UNCERTAIN
    rows = np.flatnonzero(inside.any(axis=1))
    cols = np.flatnonzero(inside.any(axis=0))
    i0, i1, j0, j1 = rows[0], rows[-1], cols[0], cols[-1]
    if i1 - i0 != j1 - j0 or (i1 - i0) % 2:
        return UNCERTAIN
    r = (i1 - i0) // 2
    cx, cy = i0 + r, j0 + r
    if np.array_equal(inside, _support("square", r, cx, cy)):
        return SQUARE
    if np.array_equal(inside, _support("disk", r, cx, cy)):
        return DISK
    return UNCERTAIN


def with_texture(spec: ShapeSpec, textured: bool) -> ShapeSpec:
    return replace(spec, textured=textured)
