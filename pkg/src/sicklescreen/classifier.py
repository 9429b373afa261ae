"""Sample-level classification: descriptor histograms -> RF/SVM -> metrics -> subject fusion."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ModelFormatError, NoMeasurableCellsError, SingleClassError
from .forest import (
    Forest,
    ForestConfig,
    forest_from_dict,
    forest_to_dict,
    predict_proba_batch,
    train_forest,
)
from .geometry import (
    MIN_REGION_AREA,
    SOLIDITY_THRESHOLD,
    Descriptors,
    build_histogram,
    descriptors,
    extract_regions,
)
from .imaging import GrayImage, LabelMask, SampleLabel
from .segmenter import SegmenterModel, segment_image
from .svm import MulticlassSvmModel, SvmConfig, svm_from_dict, svm_predict_batch, svm_to_dict, train_ovo

DEFAULT_BINS = 20
DEFAULT_RANGE = (0.0, 1.1)


class FeatureKind(str, enum.Enum):
    ROUNDNESS = "roundness"
    FORM_FACTOR = "form_factor"


@dataclass(frozen=True)
class FeatureParams:
    kind: FeatureKind = FeatureKind.ROUNDNESS
    bins: int = DEFAULT_BINS
    range: tuple = DEFAULT_RANGE
    solidity_threshold: float = SOLIDITY_THRESHOLD
    min_area: int = MIN_REGION_AREA

    def __post_init__(self):
        object.__setattr__(self, "kind", FeatureKind(self.kind))
        object.__setattr__(self, "range", (float(self.range[0]), float(self.range[1])))
        if self.bins < 1 or not self.range[0] < self.range[1]:
            raise ValueError("need bins >= 1 and range lo < hi")
        if not 0.0 <= self.solidity_threshold <= 1.0:
            raise ValueError("solidity threshold must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class SampleFeature:
    kind: FeatureKind
    histogram: np.ndarray
    cell_count: int


# --- features ------------------------------------------------------------------------


def kept_descriptors(mask: LabelMask, solidity_threshold: float = SOLIDITY_THRESHOLD,
                     min_area: int = MIN_REGION_AREA) -> list[Descriptors]:
    """Descriptors of every measurable cell whose solidity passes the threshold."""
    out = []
    for region in extract_regions(mask, min_area):
        d = descriptors(region)
        if d.solidity >= solidity_threshold:
            out.append(d)
    return out


def feature_from_descriptors(descs, params: FeatureParams) -> SampleFeature:
    if not descs:
        raise NoMeasurableCellsError()
    attr = params.kind.value
    values = [getattr(d, attr) for d in descs]
    hist = build_histogram(values, params.bins, params.range)
    return SampleFeature(params.kind, hist, len(values))


def feature_from_mask(mask: LabelMask, params: FeatureParams = FeatureParams()) -> SampleFeature:
    return feature_from_descriptors(
        kept_descriptors(mask, params.solidity_threshold, params.min_area), params)


def extract_sample_feature(image: GrayImage, seg_model: SegmenterModel,
                           params: FeatureParams = FeatureParams(), n_jobs: int = 1) -> SampleFeature:
    """Segment, measure, drop low-solidity cells, and histogram the chosen descriptor."""
    return feature_from_mask(segment_image(seg_model, image, n_jobs=n_jobs), params)


# --- models --------------------------------------------------------------------------


def default_rf_config(bins: int = DEFAULT_BINS, seed: int = 0) -> ForestConfig:
    return ForestConfig(tree_count=100, max_depth=3, features_per_node=math.ceil(math.sqrt(bins)),
                        seed=seed)


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    kind: str  # "rf" or "svm"
    model: Union[Forest, MulticlassSvmModel]
    params: FeatureParams


def _matrix(features, params: Optional[FeatureParams] = None):
    feats = list(features)
    if not feats:
        raise ValueError("no features")
    kinds = {f.kind for f in feats}
    sizes = {len(f.histogram) for f in feats}
    if len(kinds) != 1 or len(sizes) != 1:
        raise ValueError("mixed feature kinds or bin counts")
    if params is not None and (feats[0].kind != params.kind or sizes != {params.bins}):
        raise ValueError("feature kind/bins disagree with the model")
    return np.array([f.histogram for f in feats], dtype=float)


def train_classifier(examples, kind: str = "rf", params: Optional[FeatureParams] = None,
                     rf_config: Optional[ForestConfig] = None,
                     svm_config: Optional[SvmConfig] = None) -> ClassifierModel:
    """Fit an RF or SVM on (SampleFeature, SampleLabel) pairs."""
    examples = list(examples)
    feats = [f for f, _ in examples]
    X = _matrix(feats)
    y = np.array([int(SampleLabel(l)) for _, l in examples], dtype=np.intp)
    if np.unique(y).size < 2:
        raise SingleClassError()
    if params is None:
        params = FeatureParams(kind=feats[0].kind, bins=X.shape[1])
    elif params.kind != feats[0].kind or params.bins != X.shape[1]:
        raise ValueError("feature kind/bins disagree with params")
    if kind == "rf":
        cfg = rf_config or default_rf_config(X.shape[1])
        model = train_forest(X, y, cfg, class_count=len(SampleLabel))
    elif kind == "svm":
        model = train_ovo(X, y, svm_config or SvmConfig())
    else:
        raise ValueError(f"unknown classifier kind {kind!r}")
    return ClassifierModel(kind, model, params)


def predict_features(model: ClassifierModel, features) -> list[SampleLabel]:
    X = _matrix(features, model.params)
    if model.kind == "rf":
        pred = np.argmax(predict_proba_batch(model.model, X), axis=1)
    else:
        pred = svm_predict_batch(model.model, X)
    return [SampleLabel(int(p)) for p in pred]


def predict_feature(model: ClassifierModel, feature: SampleFeature) -> SampleLabel:
    return predict_features(model, [feature])[0]


def classify_sample(model: ClassifierModel, image: GrayImage, seg_model: SegmenterModel,
                    n_jobs: int = 1) -> SampleLabel:
    return predict_feature(model, extract_sample_feature(image, seg_model, model.params, n_jobs))


# --- evaluation ------------------------------------------------------------------------


@dataclass
class Metrics:
    confusion: np.ndarray  # rows = truth, cols = predicted, in SampleLabel order
    accuracy: float
    sensitivity: float
    specificity: float
    rejected_count: int = 0
    per_sample: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "sensitivity": _json_num(self.sensitivity),
            "specificity": _json_num(self.specificity),
            "rejected_count": self.rejected_count,
            "per_sample": self.per_sample,
        }


def _json_num(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


def metrics_from_confusion(confusion) -> Metrics:
    """Accuracy over all classes; sensitivity/specificity with {Sickled, Trait} as positive."""
    cm = np.asarray(confusion, dtype=np.int64)
    total = int(cm.sum())
    accuracy = float(np.trace(cm) / total) if total else float("nan")
    pos = [SampleLabel.SICKLED, SampleLabel.TRAIT]
    neg = SampleLabel.NORMAL
    tp = int(cm[np.ix_(pos, pos)].sum())
    fn = int(cm[pos, neg].sum())
    tn = int(cm[neg, neg])
    fp = int(cm[neg, pos].sum())
    sens = tp / (tp + fn) if tp + fn else float("nan")
    spec = tn / (tn + fp) if tn + fp else float("nan")
    return Metrics(cm, accuracy, sens, spec)


def confusion_matrix(truth, predicted, k: int = 3) -> np.ndarray:
    cm = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(truth, predicted):
        cm[int(t), int(p)] += 1
    return cm


def evaluate_predictions(truth, predicted, names=None, rejected=()) -> Metrics:
    m = metrics_from_confusion(confusion_matrix(truth, predicted))
    m.rejected_count = len(rejected)
    names = names if names is not None else [str(i) for i in range(len(truth))]
    m.per_sample = [{"path": n, "truth": SampleLabel(t).manifest_name,
                     "predicted": SampleLabel(p).manifest_name}
                    for n, t, p in zip(names, truth, predicted)]
    m.per_sample += [{"path": n, "truth": SampleLabel(t).manifest_name, "predicted": None}
                     for n, t in rejected]
    return m


def evaluate(model: ClassifierModel, test_set, seg_model: SegmenterModel, names=None,
             n_jobs: int = 1) -> Metrics:
    """Score (image, SampleLabel) pairs; unreadable samples are tallied, not scored."""
    items = list(test_set)
    if not items:
        raise ValueError("empty test set")
    if names is None:
        names = [str(i) for i in range(len(items))]
    truth, pred, rejected, scored = [], [], [], []
    for name, (image, label) in zip(names, items):
        try:
            p = classify_sample(model, image, seg_model, n_jobs)
        except NoMeasurableCellsError:
            rejected.append((name, label))
            continue
        scored.append(name)
        truth.append(SampleLabel(label))
        pred.append(p)
    return evaluate_predictions(truth, pred, scored, rejected)


# --- subject fusion ----------------------------------------------------------------------


class Diagnosis(str, enum.Enum):
    DISEASED = "Diseased"
    TRAIT = "Trait"
    NORMAL = "Normal"


SEVERITY = {Diagnosis.NORMAL: 0, Diagnosis.TRAIT: 1, Diagnosis.DISEASED: 2}


@dataclass(frozen=True)
class SubjectDecision:
    diagnosis: Diagnosis
    p1: SampleLabel
    p2: SampleLabel


def fuse_decisions(p1, p2) -> SubjectDecision:
    """Combine the 0.1 (p1) and 0.3 (p2) sample predictions.

    Sickling at the low concentration means disease regardless of p2.
    Sickling that shows at the low concentration only as trait and also at
    the high one is disease; sickling confined to one of the two readings
    is trait; two normal readings are normal.
    """
    p1, p2 = SampleLabel(p1), SampleLabel(p2)
    S, T, N = SampleLabel.SICKLED, SampleLabel.TRAIT, SampleLabel.NORMAL
    if p1 == S:
        d = Diagnosis.DISEASED
    elif p1 == T:
        d = Diagnosis.TRAIT if p2 == N else Diagnosis.DISEASED
    else:
        d = Diagnosis.NORMAL if p2 == N else Diagnosis.TRAIT
    return SubjectDecision(d, p1, p2)


def screen_subject(image_low: GrayImage, image_high: GrayImage, model: ClassifierModel,
                   seg_model: SegmenterModel, n_jobs: int = 1) -> SubjectDecision:
    """Classify the 0.1 and 0.3 images of one subject and fuse.

    Raises NoMeasurableCellsError if either image is unreadable.
    """
    p1 = classify_sample(model, image_low, seg_model, n_jobs)
    p2 = classify_sample(model, image_high, seg_model, n_jobs)
    return fuse_decisions(p1, p2)


# --- serialization -------------------------------------------------------------------------


def classifier_to_dict(model: ClassifierModel) -> dict:
    params = asdict(model.params)
    params["kind"] = model.params.kind.value
    params["range"] = list(model.params.range)
    inner = forest_to_dict(model.model) if model.kind == "rf" else svm_to_dict(model.model)
    return {"format_version": 1, "kind": "classifier", "classifier": model.kind,
            "feature": params, "model": inner}


def classifier_from_dict(obj) -> ClassifierModel:
    if not isinstance(obj, dict) or obj.get("kind") != "classifier":
        raise ModelFormatError("not a classifier model")
    try:
        params = FeatureParams(**obj["feature"])
        kind = obj["classifier"]
        if kind == "rf":
            inner = forest_from_dict(obj["model"])
        elif kind == "svm":
            inner = svm_from_dict(obj["model"])
        else:
            raise ModelFormatError(f"unknown classifier {kind!r}")
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed classifier model: {exc}") from None
    return ClassifierModel(kind, inner, params)


def dumps_classifier(model: ClassifierModel) -> str:
    return json.dumps(classifier_to_dict(model), separators=(",", ":"))


def loads_classifier(text: str) -> ClassifierModel:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    return classifier_from_dict(obj)
