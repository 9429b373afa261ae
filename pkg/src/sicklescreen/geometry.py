"""Binary morphology and per-cell shape measurement.

Shape descriptors for a region of area A, contour perimeter P, convex hull
area H and diameter F:

    form_factor = 4*pi*A / P**2
    roundness   = 4*A / (pi * F**2)      clamped to 1.1
    solidity    = A / H                  clamped to 1.0

H comes from the hull of the pixel corners. F is the longest caliper over
pixel centres plus half a pixel; the corner hull overshoots a digitized disc
by about one pixel, which would push small round cells well below 0.9.

All per-region measurements run in coordinates local to the region's
bounding box, so they are exactly translation invariant.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import NoMeasurableCellsError
from .imaging import LabelMask, PixelClass

MIN_REGION_AREA = 20
SOLIDITY_THRESHOLD = 0.8
ROUNDNESS_CLAMP = 1.1

_EIGHT = np.ones((3, 3), dtype=bool)

# clockwise with y pointing down: E, SE, S, SW, W, NW, N, NE
_DIRS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
_DIR_INDEX = {d: i for i, d in enumerate(_DIRS)}
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Descriptors:
    form_factor: float
    roundness: float
    solidity: float


class Region:
    """One connected set of foreground pixels."""

    def __init__(self, xs, ys):
        xs = np.asarray(xs, dtype=np.intp)
        ys = np.asarray(ys, dtype=np.intp)
        if xs.size == 0 or xs.shape != ys.shape:
            raise ValueError("a region needs at least one pixel")
        self.xs = xs
        self.ys = ys

    @property
    def area(self) -> int:
        return int(self.xs.size)

    @property
    def bbox(self):
        """(x0, y0, x1, y1), inclusive."""
        return (int(self.xs.min()), int(self.ys.min()), int(self.xs.max()), int(self.ys.max()))

    def local_grid(self, pad: int = 1) -> np.ndarray:
        x0, y0, x1, y1 = self.bbox
        grid = np.zeros((y1 - y0 + 1 + 2 * pad, x1 - x0 + 1 + 2 * pad), dtype=bool)
        grid[self.ys - y0 + pad, self.xs - x0 + pad] = True
        return grid

    @cached_property
    def perimeter(self) -> float:
        return region_perimeter(self)

    @cached_property
    def _hull(self):
        return hull_metrics(self)

    @property
    def hull_area(self) -> float:
        return self._hull[0]

    @property
    def max_feret(self) -> float:
        return self._hull[1]

    @cached_property
    def diameter(self) -> float:
        return center_diameter(self)

    def __repr__(self):
        return f"Region(area={self.area}, bbox={self.bbox})"


# --- masks ---------------------------------------------------------------------


def interior_binary(mask: LabelMask) -> np.ndarray:
    """Foreground = Interior pixels; Boundary pixels act as separators."""
    return mask.classes == PixelClass.INTERIOR


def connected_components(mask) -> list[Region]:
    """8-connected regions ordered by their first pixel in a row-major scan."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    flat = labels.ravel()
    fg = np.flatnonzero(flat)
    lab = flat[fg]
    order = np.argsort(lab, kind="stable")
    fg, lab = fg[order], lab[order]
    starts = np.flatnonzero(np.r_[True, lab[1:] != lab[:-1]])
    groups = np.split(fg, starts[1:])
    # groups are already row-major internally; sort groups by first pixel
    groups.sort(key=lambda g: g[0])
    w = mask.shape[1]
    out = []
    for g in groups:
        ys, xs = np.divmod(g, w)
        out.append(Region(xs, ys))
    return out


def fill_holes(mask) -> np.ndarray:
    """Background not 4-connected to the image border becomes foreground."""
    mask = np.asarray(mask, dtype=bool)
    return ndimage.binary_fill_holes(mask)


def remove_border_components(regions, width: int, height: int) -> list[Region]:
    keep = []
    for r in regions:
        x0, y0, x1, y1 = r.bbox
        if x0 > 0 and y0 > 0 and x1 < width - 1 and y1 < height - 1:
            keep.append(r)
    return keep


# --- perimeter -------------------------------------------------------------------


def _crack_length(grid: np.ndarray) -> float:
    """Number of pixel edges separating the region from the outside."""
    g = grid.astype(np.int8)
    return float(np.abs(np.diff(g, axis=0)).sum() + np.abs(np.diff(g, axis=1)).sum())


def _moore_cycle(grid: np.ndarray):
    """Trace the outer contour of the region in a zero-padded grid.

    Returns the list of (x, y) contour vertices and step lengths along the
    closed cycle, or None for an isolated pixel.
    """
    ys, xs = np.nonzero(grid)
    p = (int(xs[0]), int(ys[0]))  # np.nonzero is row-major: top-most, then left-most
    b = 4  # entered from the west, which is background
    seen = {(p, b): 0}
    verts = [p]
    steps = []
    while True:
        found = None
        for k in range(1, 9):
            d = (b + k) % 8
            q = (p[0] + _DIRS[d][0], p[1] + _DIRS[d][1])
            if grid[q[1], q[0]]:
                found = d
                break
        if found is None:
            return None
        prev = _DIRS[(found - 1) % 8]
        c = (p[0] + _DIRS[found][0], p[1] + _DIRS[found][1])
        b = _DIR_INDEX[(p[0] + prev[0] - c[0], p[1] + prev[1] - c[1])]
        steps.append(1.0 if found % 2 == 0 else _SQRT2)
        p = c
        key = (p, b)
        if key in seen:
            j = seen[key]
            return verts[j:], steps[j:]
        seen[key] = len(steps)
        verts.append(p)


def region_perimeter(region: Region) -> float:
    """Moore-contour length with unit axial and sqrt(2) diagonal steps.

    Regions whose contour encloses no area (single pixels, one-pixel-thick
    lines) fall back to the count of exposed pixel edges; a single pixel
    therefore measures 4.
    """
    grid = region.local_grid(pad=1)
    traced = _moore_cycle(grid)
    if traced is None:
        return 4.0
    verts, steps = traced
    v = np.asarray(verts, dtype=np.int64)
    twice_area = np.dot(v[:, 0], np.roll(v[:, 1], -1)) - np.dot(v[:, 1], np.roll(v[:, 0], -1))
    if twice_area == 0:
        return _crack_length(grid)
    return float(math.fsum(steps))


# --- hull ------------------------------------------------------------------------


def _cross(o, a, b) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def monotone_chain(points) -> list:
    """Convex hull (counter-clockwise, no collinear points) of integer points."""
    pts = sorted(set(map(tuple, points)))
    if len(pts) <= 2:
        return pts
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def _boundary_pixels(region: Region):
    grid = region.local_grid(pad=1)
    inner = ndimage.binary_erosion(grid, structure=ndimage.generate_binary_structure(2, 1))
    ys, xs = np.nonzero(grid & ~inner)
    return xs, ys


def hull_metrics(region: Region):
    """(hull_area, max_feret) over the corner points of the region's boundary pixels."""
    xs, ys = _boundary_pixels(region)
    # doubled coordinates keep the pixel corners on the integer lattice
    cx, cy = 2 * xs, 2 * ys
    corners = np.concatenate(
        [np.stack([cx + dx, cy + dy], axis=1) for dx in (-1, 1) for dy in (-1, 1)]
    )
    hull = monotone_chain(corners.tolist())
    h = np.asarray(hull, dtype=np.int64)
    twice = int(np.dot(h[:, 0], np.roll(h[:, 1], -1)) - np.dot(h[:, 1], np.roll(h[:, 0], -1)))
    hull_area = abs(twice) / 8.0
    diff = h[:, None, :] - h[None, :, :]
    d2 = int((diff * diff).sum(axis=2).max())
    return hull_area, math.sqrt(d2) / 2.0


def center_diameter(region: Region) -> float:
    """Longest distance between pixel centres, plus half a pixel."""
    xs, ys = _boundary_pixels(region)
    h = np.asarray(monotone_chain(np.stack([xs, ys], axis=1).tolist()), dtype=np.int64)
    diff = h[:, None, :] - h[None, :, :]
    return math.sqrt(int((diff * diff).sum(axis=2).max())) + 0.5


# --- descriptors -----------------------------------------------------------------


def descriptors(region: Region) -> Descriptors:
    a = float(region.area)
    p = region.perimeter
    hull_area, f = region.hull_area, region.diameter
    form_factor = 4.0 * math.pi * a / (p * p)
    roundness = min(4.0 * a / (math.pi * f * f), ROUNDNESS_CLAMP)
    solidity = min(a / hull_area, 1.0)
    return Descriptors(form_factor, roundness, solidity)


def extract_regions(mask: LabelMask, min_area: int = MIN_REGION_AREA) -> list[Region]:
    """Interior pixels -> fill holes -> components -> drop border cells -> drop specks."""
    fg = fill_holes(interior_binary(mask))
    regions = connected_components(fg)
    regions = remove_border_components(regions, mask.width, mask.height)
    return [r for r in regions if r.area >= min_area]


def build_histogram(values, bins: int, range) -> np.ndarray:
    """Normalized histogram on uniform bins; bins are [lo, hi) except the last, which is closed."""
    lo, hi = float(range[0]), float(range[1])
    if bins < 1 or not lo < hi:
        raise ValueError("need bins >= 1 and lo < hi")
    v = np.clip(np.asarray(values, dtype=float).ravel(), lo, hi)
    if v.size == 0:
        raise NoMeasurableCellsError()
    idx = np.floor((v - lo) / (hi - lo) * bins).astype(np.intp)
    idx = np.minimum(idx, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(float)
    return counts / v.size


@dataclass(frozen=True)
class RegionRecord:
    region_id: int
    area: int
    perimeter: float
    descriptors: Descriptors
    kept: bool


def measure_regions(regions, solidity_threshold: float = SOLIDITY_THRESHOLD) -> list[RegionRecord]:
    out = []
    for i, r in enumerate(regions):
        d = descriptors(r)
        out.append(RegionRecord(i, r.area, r.perimeter, d, d.solidity >= solidity_threshold))
    return out


DESCRIPTOR_FIELDS = ("region_id", "area", "perimeter", "form_factor", "roundness", "solidity", "kept")


def write_descriptor_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DESCRIPTOR_FIELDS)
        for rec in records:
            d = rec.descriptors
            w.writerow([rec.region_id, rec.area, repr(rec.perimeter), repr(d.form_factor),
                        repr(d.roundness), repr(d.solidity), int(rec.kept)])
