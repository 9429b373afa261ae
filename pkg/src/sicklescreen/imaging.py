"""Grayscale image I/O, label masks, patch extraction and the dataset manifest."""

from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    DimensionOverflowError,
    MalformedHeaderError,
    TruncatedDataError,
    UnsupportedMaxvalError,
)

MAX_DIM = 8192


class PixelClass(enum.IntEnum):
    BACKGROUND = 0
    BOUNDARY = 1
    INTERIOR = 2


class SampleLabel(enum.IntEnum):
    SICKLED = 0
    TRAIT = 1
    NORMAL = 2

    @property
    def manifest_name(self) -> str:
        return _LABEL_NAMES[self]

    @classmethod
    def from_name(cls, name: str) -> "SampleLabel":
        try:
            return _NAME_LABELS[name.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown sample label {name!r}") from None


_LABEL_NAMES = {
    SampleLabel.SICKLED: "diseased",
    SampleLabel.TRAIT: "trait",
    SampleLabel.NORMAL: "normal",
}
_NAME_LABELS = {v: k for k, v in _LABEL_NAMES.items()}
_NAME_LABELS["sickled"] = SampleLabel.SICKLED

# PGM encoding of mask classes
MASK_GRAY = {PixelClass.BACKGROUND: 0, PixelClass.BOUNDARY: 128, PixelClass.INTERIOR: 255}


def _check_dims(width: int, height: int) -> None:
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"non-positive dimensions {width}x{height}")
    if width > MAX_DIM or height > MAX_DIM:
        raise DimensionOverflowError(f"dimensions {width}x{height} exceed {MAX_DIM}")


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale raster. ``pixels`` has shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2:
            raise ValueError("GrayImage needs a 2-D array")
        h, w = arr.shape
        _check_dims(w, h)
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_bytes(cls, width: int, height: int, data) -> "GrayImage":
        _check_dims(width, height)
        buf = np.frombuffer(bytes(data), dtype=np.uint8)
        if buf.size != width * height:
            raise ValueError(f"expected {width * height} bytes, got {buf.size}")
        return cls(buf.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Per-pixel PixelClass codes, shape (height, width)."""

    classes: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.classes)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("LabelMask needs a non-empty 2-D array")
        if arr.size and (arr.min() < 0 or arr.max() > 2):
            raise ValueError("mask classes must be 0, 1 or 2")
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "classes", arr)

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LabelMask):
            return NotImplemented
        return self.classes.shape == other.classes.shape and bool(
            np.array_equal(self.classes, other.classes)
        )

    def to_gray(self) -> GrayImage:
        lut = np.array([MASK_GRAY[c] for c in PixelClass], dtype=np.uint8)
        return GrayImage(lut[self.classes])

    @classmethod
    def from_gray(cls, image: GrayImage) -> "LabelMask":
        px = image.pixels
        out = np.zeros(px.shape, dtype=np.uint8)
        out[px == 128] = PixelClass.BOUNDARY
        out[px == 255] = PixelClass.INTERIOR
        bad = ~np.isin(px, (0, 128, 255))
        if bad.any():
            raise ValueError("mask PGM holds values outside {0, 128, 255}")
        return cls(out)

    def __repr__(self):
        return f"LabelMask({self.width}x{self.height})"


@dataclass(frozen=True, eq=False)
class PatchVector:
    values: np.ndarray
    side: int

    def __len__(self):
        return len(self.values)


# --- PGM ---------------------------------------------------------------------


def _header_tokens(raw: bytes, count: int):
    """Return ``count`` whitespace-separated header tokens and the offset after them."""
    tokens = []
    pos = 0
    n = len(raw)
    while len(tokens) < count:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise MalformedHeaderError("unexpected end of header")
        if raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not raw[pos : pos + 1].isspace() and raw[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(raw[start:pos])
    return tokens, pos


def _parse_int(tok: bytes, what: str) -> int:
    if not tok.isdigit():
        raise MalformedHeaderError(f"bad {what}: {tok!r}")
    return int(tok)


def parse_pgm(raw: bytes) -> GrayImage:
    """Decode P2 or P5 graymap bytes."""
    (magic,), _ = _header_tokens(raw, 1)
    if magic not in (b"P2", b"P5"):
        raise MalformedHeaderError(f"not a P2/P5 graymap (magic {magic!r})")
    (_, w_tok, h_tok, m_tok), pos = _header_tokens(raw, 4)
    width = _parse_int(w_tok, "width")
    height = _parse_int(h_tok, "height")
    maxval = _parse_int(m_tok, "maxval")
    _check_dims(width, height)
    if maxval > 255:
        raise UnsupportedMaxvalError(f"unsupported maxval {maxval}")
    if maxval < 1:
        raise MalformedHeaderError(f"bad maxval {maxval}")
    npix = width * height

    if magic == b"P5":
        # exactly one whitespace byte separates maxval from the raster
        body = raw[pos + 1 :]
        if len(body) < npix:
            raise TruncatedDataError(f"expected {npix} pixel bytes, got {len(body)}")
        px = np.frombuffer(body[:npix], dtype=np.uint8)
    else:
        parts = []
        for line in raw[pos:].splitlines():
            parts.append(line.split(b"#", 1)[0])
        toks = b" ".join(parts).split()
        if len(toks) < npix:
            raise TruncatedDataError(f"expected {npix} samples, got {len(toks)}")
        try:
            px = np.array([int(t) for t in toks[:npix]], dtype=np.int64)
        except ValueError:
            raise MalformedHeaderError("non-integer sample in P2 raster") from None
    if px.size and int(px.max()) > maxval:
        raise MalformedHeaderError("sample exceeds maxval")
    return GrayImage(px.astype(np.uint8).reshape(height, width))


def read_pgm(path) -> GrayImage:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def encode_pgm(image: GrayImage) -> bytes:
    return f"P5\n{image.width} {image.height}\n255\n".encode("ascii") + image.data


def write_pgm(image: GrayImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(image))


def read_mask(path) -> LabelMask:
    return LabelMask.from_gray(read_pgm(path))


def write_mask(mask: LabelMask, path) -> None:
    write_pgm(mask.to_gray(), path)


# --- patches -----------------------------------------------------------------


def mirror_index(idx, n: int):
    """Fold indices into [0, n) by reflecting about the border (edge pixel repeated)."""
    idx = np.asarray(idx)
    m = np.mod(idx, 2 * n)
    return np.where(m >= n, 2 * n - 1 - m, m)


def mirror_pad(pixels: np.ndarray, radius: int) -> np.ndarray:
    h, w = pixels.shape
    rows = mirror_index(np.arange(-radius, h + radius), h)
    cols = mirror_index(np.arange(-radius, w + radius), w)
    return pixels[np.ix_(rows, cols)]


def _check_side(side: int) -> int:
    side = int(side)
    if side < 1 or side % 2 == 0:
        raise ValueError(f"patch side must be odd and positive, got {side}")
    return side


def patch_matrix(image: GrayImage, xs, ys, side: int) -> np.ndarray:
    """Stack normalized patches centered at (xs[i], ys[i]) into an (n, side*side) array."""
    side = _check_side(side)
    r = side // 2
    xs = np.asarray(xs, dtype=np.intp)
    ys = np.asarray(ys, dtype=np.intp)
    padded = mirror_pad(image.pixels, r)
    off = np.arange(side)
    rows = ys[:, None, None] + off[None, :, None]
    cols = xs[:, None, None] + off[None, None, :]
    return padded[rows, cols].reshape(len(xs), side * side) / 255.0


def extract_patch(image: GrayImage, cx: int, cy: int, side: int) -> PatchVector:
    side = _check_side(side)
    if not (0 <= cx < image.width and 0 <= cy < image.height):
        raise ValueError(f"center ({cx}, {cy}) outside {image.width}x{image.height} image")
    return PatchVector(patch_matrix(image, [cx], [cy], side)[0], side)


def sample_pixel_coords(truth: LabelMask, per_class: int, rng_seed: int):
    """Class-stratified coordinates: up to ``per_class`` pixels of each class.

    Returns (xs, ys, labels) in class order, each stratum in draw order.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = np.random.default_rng(rng_seed)
    flat = truth.classes.ravel()
    picks, labels = [], []
    for cls in PixelClass:
        where = np.flatnonzero(flat == cls)
        if where.size == 0:
            continue
        take = rng.choice(where.size, size=min(per_class, where.size), replace=False)
        picks.append(where[take])
        labels.append(np.full(take.size, int(cls), dtype=np.intp))
    if not picks:
        empty = np.zeros(0, dtype=np.intp)
        return empty, empty, empty
    idx = np.concatenate(picks)
    ys, xs = np.divmod(idx, truth.width)
    return xs, ys, np.concatenate(labels)


def sample_training_patches(
    image: GrayImage, truth: LabelMask, per_class: int, rng_seed: int, side: int = 21
):
    """Stratified (PatchVector, PixelClass) training pairs drawn without replacement."""
    if (image.width, image.height) != (truth.width, truth.height):
        raise DimensionMismatchError("mask and image dimensions differ")
    xs, ys, labels = sample_pixel_coords(truth, per_class, rng_seed)
    mat = patch_matrix(image, xs, ys, side)
    return [(PatchVector(row, side), PixelClass(int(c))) for row, c in zip(mat, labels)]


# --- manifest ----------------------------------------------------------------

MANIFEST_FIELDS = ("path", "label", "concentration", "timepoint", "split")
CONCENTRATIONS = (0.1, 0.3)
TIMEPOINTS = (0, 30)
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label: SampleLabel
    concentration: float
    timepoint: int
    split: str

    def __post_init__(self):
        if self.concentration not in CONCENTRATIONS:
            raise ValueError(f"concentration must be one of {CONCENTRATIONS}")
        if self.timepoint not in TIMEPOINTS:
            raise ValueError(f"timepoint must be one of {TIMEPOINTS}")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")


def mask_path_for(path) -> str:
    """Truth-mask file that accompanies an image in a corpus."""
    p = Path(path)
    return str(p.with_name(p.stem + "_mask" + p.suffix))


def write_manifest(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in rows:
            w.writerow([r.path, r.label.manifest_name, r.concentration, r.timepoint, r.split])


def read_manifest(path) -> list[ManifestRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
            raise ValueError(f"manifest header must be {','.join(MANIFEST_FIELDS)}")
        return [
            ManifestRow(
                path=rec["path"],
                label=SampleLabel.from_name(rec["label"]),
                concentration=float(rec["concentration"]),
                timepoint=int(rec["timepoint"]),
                split=rec["split"],
            )
            for rec in reader
        ]


def resolve(manifest_path, rel: str) -> str:
    """Manifest paths are relative to the manifest's directory."""
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), rel)
