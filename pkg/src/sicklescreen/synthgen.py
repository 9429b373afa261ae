"""Seeded synthetic blood-smear generator with exact 3-class truth masks.

Cells are discs, crenated discs (radial sinusoid) or sickle crescents (a disc
minus an offset disc of equal radius), placed without overlap on a dim,
unevenly lit, noisy background.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import CanvasTooCrowdedError
from .forest import derive_seed
from .imaging import (
    CONCENTRATIONS,
    GrayImage,
    LabelMask,
    ManifestRow,
    PixelClass,
    SampleLabel,
    mask_path_for,
    write_manifest,
    write_mask,
    write_pgm,
)

RADIUS_RANGE = (8.0, 30.0)


class CellKind(enum.Enum):
    DISC = "disc"
    CRENATED = "crenated"
    SICKLE = "sickle"


@dataclass(frozen=True)
class CellShape:
    kind: CellKind
    center: tuple
    radius: float
    orientation: float = 0.0
    crenation_amplitude: float = 0.0
    crenation_frequency: int = 0
    crescent_offset: float = 0.0  # bite-disc offset as a fraction of radius

    def __post_init__(self):
        if not RADIUS_RANGE[0] <= self.radius <= RADIUS_RANGE[1]:
            raise ValueError(f"radius {self.radius} outside {RADIUS_RANGE}")
        if not 0 <= self.crenation_amplitude < self.radius / 3:
            raise ValueError("crenation amplitude must be below radius/3")

    @property
    def extent(self) -> float:
        """Radius of a circle about the center that contains the shape."""
        return self.radius + self.crenation_amplitude + 0.5

    def contains(self, x, y):
        """Pixel-center membership; the outline sits half a pixel outside the radius."""
        dx = np.asarray(x, dtype=float) - self.center[0]
        dy = np.asarray(y, dtype=float) - self.center[1]
        rho = np.hypot(dx, dy)
        if self.kind is CellKind.DISC:
            return rho <= self.radius + 0.5
        if self.kind is CellKind.CRENATED:
            theta = np.arctan2(dy, dx) - self.orientation
            edge = self.radius + self.crenation_amplitude * np.sin(self.crenation_frequency * theta)
            return rho <= edge + 0.5
        off = self.crescent_offset * self.radius
        bx = dx - off * math.cos(self.orientation)
        by = dy - off * math.sin(self.orientation)
        return (rho <= self.radius + 0.5) & (np.hypot(bx, by) > self.radius + 0.5)


def _default_sickle_table():
    return {
        (SampleLabel.SICKLED, 0.1): 0.7,
        (SampleLabel.SICKLED, 0.3): 0.8,
        (SampleLabel.TRAIT, 0.1): 0.05,
        (SampleLabel.TRAIT, 0.3): 0.5,
        (SampleLabel.NORMAL, 0.1): 0.02,
        (SampleLabel.NORMAL, 0.3): 0.02,
    }


@dataclass(frozen=True)
class SynthConfig:
    size: int = 512
    cells: tuple = (170, 210)
    radius: tuple = (9.0, 12.0)
    sickle_fraction: dict = field(default_factory=_default_sickle_table)
    crenated_fraction: tuple = (0.0, 0.8)  # per-image rate drawn from this range
    crenation_amplitude: tuple = (0.12, 0.17)  # fraction of radius
    crenation_frequency: tuple = (7, 9)
    crescent_offset: tuple = (1.25, 1.45)  # fraction of radius
    background: float = 150.0
    gradient: float = 10.0  # illumination offset spans [-a, +a], a ~ U(-gradient, gradient)
    cell_delta: float = -20.0
    rim_delta: float = -15.0  # extra darkening of the membrane rim
    noise_sigma: float = 6.0
    min_gap: float = 2.0
    max_tries: int = 1000
    seed: int = 7

    def __post_init__(self):
        for key, frac in self.sickle_fraction.items():
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"sickle fraction {frac} for {key} outside [0, 1]")
        if abs(self.cell_delta) < 5:
            raise ValueError("cell contrast delta must be at least 5 in magnitude")
        lo, hi = self.radius
        if not RADIUS_RANGE[0] <= lo <= hi <= RADIUS_RANGE[1]:
            raise ValueError(f"radius range must lie in {RADIUS_RANGE}")
        if self.cells[0] < 0 or self.cells[0] > self.cells[1]:
            raise ValueError("bad cells-per-image range")
        if self.crenation_amplitude[1] >= 1 / 3:
            raise ValueError("crenation amplitude must stay below radius/3")
        if self.size < 8 or self.size > 8192:
            raise ValueError("image size out of range")

    def sickle_rate(self, label: SampleLabel, concentration: float) -> float:
        return self.sickle_fraction[(SampleLabel(label), _conc(concentration))]


def _conc(c: float) -> float:
    for ref in CONCENTRATIONS:
        if abs(float(c) - ref) < 1e-9:
            return ref
    raise ValueError(f"concentration must be one of {CONCENTRATIONS}")


@dataclass(frozen=True)
class SynthSample:
    image: GrayImage
    mask: LabelMask
    label: SampleLabel
    concentration: float
    shapes: tuple


def _draw_shape(rng, cfg: SynthConfig, kind: CellKind, center) -> CellShape:
    r = float(rng.uniform(*cfg.radius))
    orient = float(rng.uniform(0, 2 * math.pi))
    if kind is CellKind.CRENATED:
        amp = float(rng.uniform(*cfg.crenation_amplitude)) * r
        freq = int(rng.integers(cfg.crenation_frequency[0], cfg.crenation_frequency[1] + 1))
        return CellShape(kind, center, r, orient, crenation_amplitude=amp, crenation_frequency=freq)
    if kind is CellKind.SICKLE:
        return CellShape(kind, center, r, orient, crescent_offset=float(rng.uniform(*cfg.crescent_offset)))
    return CellShape(kind, center, r, orient)


def _place(rng, cfg: SynthConfig, kinds) -> list[CellShape]:
    placed: list[CellShape] = []
    for kind in kinds:
        for _ in range(cfg.max_tries):
            shape = _draw_shape(rng, cfg, kind, (0.0, 0.0))
            lo = shape.extent + 1.0
            hi = cfg.size - 1 - lo
            if hi <= lo:
                raise CanvasTooCrowdedError()
            c = (float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)))
            if all(math.hypot(c[0] - o.center[0], c[1] - o.center[1])
                   >= shape.extent + o.extent + cfg.min_gap for o in placed):
                placed.append(replace(shape, center=c))
                break
        else:
            raise CanvasTooCrowdedError()
    return placed


def rasterize(shapes, width: int, height: int) -> LabelMask:
    """Truth mask: a cell pixel is Boundary when any 8-neighbour lies outside that cell."""
    classes = np.zeros((height, width), dtype=np.uint8)
    for s in shapes:
        e = int(math.ceil(s.extent)) + 1
        cx, cy = int(round(s.center[0])), int(round(s.center[1]))
        x0, x1 = max(cx - e, 0), min(cx + e, width - 1)
        y0, y1 = max(cy - e, 0), min(cy + e, height - 1)
        ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
        inside = s.contains(xs, ys)
        padded = np.pad(inside, 1)
        core = ndimage.binary_erosion(padded, structure=np.ones((3, 3), bool))[1:-1, 1:-1]
        sub = classes[y0 : y1 + 1, x0 : x1 + 1]
        sub[inside & ~core] = PixelClass.BOUNDARY
        sub[core] = PixelClass.INTERIOR
    return LabelMask(classes)


def render(mask: LabelMask, rng, cfg: SynthConfig) -> GrayImage:
    h, w = mask.classes.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    amp = float(rng.uniform(-cfg.gradient, cfg.gradient))
    ang = float(rng.uniform(0, 2 * math.pi))
    proj = (xs - (w - 1) / 2) * math.cos(ang) + (ys - (h - 1) / 2) * math.sin(ang)
    span = np.abs(proj).max() or 1.0
    img = cfg.background + amp * proj / span
    cls = mask.classes
    img = img + np.where(cls != PixelClass.BACKGROUND, cfg.cell_delta, 0.0)
    img = img + np.where(cls == PixelClass.BOUNDARY, cfg.rim_delta, 0.0)
    img = img + rng.normal(0.0, cfg.noise_sigma, size=img.shape)
    return GrayImage(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def synth_sample(label, concentration: float, seed: int, config: SynthConfig = SynthConfig()) -> SynthSample:
    label = SampleLabel(label)
    conc = _conc(concentration)
    rng = np.random.default_rng(seed)
    n = int(rng.integers(config.cells[0], config.cells[1] + 1))
    sickle = config.sickle_rate(label, conc)
    crenated = float(rng.uniform(*config.crenated_fraction))
    # the sickle count is exact, so an image never exceeds its table rate
    n_sickle = int(math.floor(sickle * n + 1e-9))
    others = [CellKind.CRENATED if v < crenated else CellKind.DISC for v in rng.random(n - n_sickle)]
    pool = [CellKind.SICKLE] * n_sickle + others
    kinds = [pool[i] for i in rng.permutation(n)]
    shapes = _place(rng, config, kinds)
    mask = rasterize(shapes, config.size, config.size)
    image = render(mask, rng, config)
    return SynthSample(image, mask, label, conc, tuple(shapes))


def synth_image(label, concentration: float, seed: int, config: SynthConfig = SynthConfig()):
    s = synth_sample(label, concentration, seed, config)
    return s.image, s.mask, s.label


def sample_seed(base_seed: int, label, concentration: float, index: int) -> int:
    return derive_seed(base_seed, int(SampleLabel(label)), int(round(_conc(concentration) * 10)), index)


# --- corpus ----------------------------------------------------------------------


def _split_counts(total: int, test: int):
    rest = total - test
    train = int(round(rest * 0.7))
    return {"train": train, "val": rest - train, "test": test}


def default_counts() -> dict:
    """156 samples: 28 diseased, 37 trait, 91 normal, of which 5/7/15 are held out.

    Diseased samples are imaged at 0.1 and trait samples at 0.3, the
    concentrations where each class shows its sickling; normal samples are
    split across both. The remaining 129 are split 70/30 per stratum.
    """
    counts = {}
    strata = [
        (SampleLabel.SICKLED, 0.1, 28, 5),
        (SampleLabel.TRAIT, 0.3, 37, 7),
        (SampleLabel.NORMAL, 0.1, 46, 8),
        (SampleLabel.NORMAL, 0.3, 45, 7),
    ]
    for label, conc, total, test in strata:
        for split, n in _split_counts(total, test).items():
            counts[(label, conc, split)] = n
    return counts


def corpus_plan(config: SynthConfig, counts: dict):
    """Ordered (file stem, label, concentration, split, seed) for each sample."""
    plan = []
    next_index: dict = {}
    for label in SampleLabel:
        for conc in CONCENTRATIONS:
            for split in ("train", "val", "test"):
                n = int(counts.get((label, conc, split), 0))
                for _ in range(n):
                    i = next_index.get((label, conc), 0)
                    next_index[(label, conc)] = i + 1
                    stem = f"{label.manifest_name}_c{int(round(conc * 10))}_{i:03d}"
                    plan.append((stem, label, conc, split, sample_seed(config.seed, label, conc, i)))
    return plan


def synth_corpus(config: SynthConfig = SynthConfig(), counts=None, out_dir=".", n_jobs: int = 1) -> str:
    """Write images, truth masks and ``manifest.csv`` into out_dir; return the manifest path."""
    counts = default_counts() if counts is None else counts
    os.makedirs(out_dir, exist_ok=True)
    plan = corpus_plan(config, counts)

    def one(item):
        stem, label, conc, split, seed = item
        s = synth_sample(label, conc, seed, config)
        rel = stem + ".pgm"
        write_pgm(s.image, os.path.join(out_dir, rel))
        write_mask(s.mask, os.path.join(out_dir, mask_path_for(rel)))
        return ManifestRow(rel, label, conc, 30, split)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(one, plan))
    else:
        rows = [one(item) for item in plan]
    manifest = os.path.join(out_dir, "manifest.csv")
    write_manifest(rows, manifest)
    return manifest
