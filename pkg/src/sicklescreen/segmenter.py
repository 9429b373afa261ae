"""Patch-based 3-class pixel segmentation with a random forest."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ModelFormatError, ScreeningError
from .forest import (
    Forest,
    ForestConfig,
    derive_seed,
    forest_from_dict,
    forest_to_dict,
    flatten,
    predict_batch,
    predict_proba_offsets,
    train_forest,
)
from .imaging import GrayImage, LabelMask, mirror_pad, patch_matrix, sample_pixel_coords

DEFAULT_SIDE = 21
DEFAULT_PER_CLASS = 2000
SEGMENTER_FOREST = ForestConfig(tree_count=50, max_depth=5)
TRAIN_FRACTION = 0.7


@dataclass(frozen=True)
class SegmenterModel:
    forest: Forest
    side: int

    def __post_init__(self):
        if self.forest.feature_count != self.side * self.side:
            raise ValueError("forest feature count must equal side**2")
        if self.forest.class_count != 3:
            raise ValueError("segmenter forest must have 3 classes")


def pool_patches(pairs, side: int, per_class: int, seed: int):
    """Stratified patch pool from every (image, truth) pair, in pair order."""
    mats, labels = [], []
    for i, (image, truth) in enumerate(pairs):
        if (image.width, image.height) != (truth.width, truth.height):
            raise DimensionMismatchError(f"pair {i}: mask and image dimensions differ")
        xs, ys, lab = sample_pixel_coords(truth, per_class, derive_seed(seed, i))
        mats.append(patch_matrix(image, xs, ys, side))
        labels.append(lab)
    if not mats or sum(len(l) for l in labels) == 0:
        raise ScreeningError("empty patch pool")
    return np.concatenate(mats), np.concatenate(labels)


def train_segmenter(pairs, config: ForestConfig = SEGMENTER_FOREST, side: int = DEFAULT_SIDE,
                    per_class: int = DEFAULT_PER_CLASS, seed: int = 0, n_jobs: int = 1):
    """Train on 70% of the pooled patches; return (model, train accuracy, val accuracy)."""
    pairs = list(pairs)
    if not pairs:
        raise ScreeningError("no training pairs")
    X, y = pool_patches(pairs, side, per_class, seed)
    order = np.random.default_rng(derive_seed(seed, 0x5E9)).permutation(len(y))
    cut = int(round(TRAIN_FRACTION * len(y)))
    tr, va = order[:cut], order[cut:]
    forest = train_forest(X[tr], y[tr], config, class_count=3, n_jobs=n_jobs)
    model = SegmenterModel(forest, side)
    train_acc = float(np.mean(predict_batch(forest, X[tr]) == y[tr]))
    val_acc = float(np.mean(predict_batch(forest, X[va]) == y[va])) if va.size else float("nan")
    return model, train_acc, val_acc


def _segment_rows(model: SegmenterModel, flat_forest, padded: np.ndarray, width: int,
                  rows: range) -> np.ndarray:
    side = model.side
    wp = padded.shape[1]
    ys = np.repeat(np.arange(rows.start, rows.stop), width)
    xs = np.tile(np.arange(width), len(rows))
    f = np.arange(side * side)
    offsets = (f // side) * wp + f % side
    proba = predict_proba_offsets(model.forest, padded.ravel(), ys * wp + xs, offsets, flat_forest)
    return np.argmax(proba, axis=1).astype(np.uint8).reshape(len(rows), width)


def segment_image(model: SegmenterModel, image: GrayImage, n_jobs: int = 1,
                  rows_per_chunk: int = 64) -> LabelMask:
    """Classify every pixel from its mirrored side x side neighbourhood.

    Rows are processed in independent chunks, so the result does not depend
    on ``n_jobs``.
    """
    if model.forest.feature_count != model.side * model.side:
        raise DimensionMismatchError("model patch side does not match its forest")
    padded = np.ascontiguousarray(mirror_pad(image.pixels, model.side // 2) / 255.0)
    flat_forest = flatten(model.forest)
    h, w = image.height, image.width
    chunks = [range(r, min(r + rows_per_chunk, h)) for r in range(0, h, rows_per_chunk)]

    def run(rs):
        return _segment_rows(model, flat_forest, padded, w, rs)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(rs) for rs in chunks]
    return LabelMask(np.concatenate(parts, axis=0))


def pixel_accuracy(predicted: LabelMask, truth: LabelMask) -> float:
    if predicted.classes.shape != truth.classes.shape:
        raise DimensionMismatchError("mask dimensions differ")
    return float(np.mean(predicted.classes == truth.classes))


# --- serialization --------------------------------------------------------------------


def segmenter_to_dict(model: SegmenterModel) -> dict:
    return {"format_version": 1, "kind": "segmenter", "patch_side": model.side,
            "forest": forest_to_dict(model.forest)}


def segmenter_from_dict(obj) -> SegmenterModel:
    if not isinstance(obj, dict) or obj.get("kind") != "segmenter":
        raise ModelFormatError("not a segmenter model")
    try:
        return SegmenterModel(forest_from_dict(obj["forest"]), int(obj["patch_side"]))
    except KeyError as exc:
        raise ModelFormatError(f"segmenter model missing {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(str(exc)) from None


def dumps_segmenter(model: SegmenterModel) -> str:
    return json.dumps(segmenter_to_dict(model), separators=(",", ":"))


def loads_segmenter(text: str) -> SegmenterModel:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    return segmenter_from_dict(obj)
