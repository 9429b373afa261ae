"""Command-line entry point: ``sicklescreen <command> [options] [--section.key=value ...]``.

Configuration resolves as defaults < JSON file (``--config``) < dotted flag
overrides. Every JSON report embeds the resolved configuration. ``--threads``
only changes scheduling, so it is kept out of the configuration and out of
the reports.

Exit status: 0 success, 1 usage or configuration error, 2 data error
(unreadable image, sample, manifest or model), 3 internal failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import Optional

import numpy as np

from . import __version__
from .classifier import (
    FeatureParams,
    dumps_classifier,
    evaluate_predictions,
    feature_from_descriptors,
    fuse_decisions,
    kept_descriptors,
    loads_classifier,
    predict_feature,
    predict_features,
    train_classifier,
)
from .errors import ConfigError, NoMeasurableCellsError, ScreeningError
from .forest import ForestConfig, derive_seed
from .geometry import extract_regions, measure_regions, write_descriptor_csv
from .imaging import (
    mask_path_for,
    read_manifest,
    read_mask,
    read_pgm,
    resolve,
    write_mask,
)
from .segmenter import dumps_segmenter, loads_segmenter, pixel_accuracy, segment_image, train_segmenter
from .svm import SvmConfig, grid_search
from .synthgen import SynthConfig, default_counts, synth_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

# --- configuration -------------------------------------------------------------------


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    model_dir: str = "models"
    output_dir: str = "out"


_SYNTH = SynthConfig()


@dataclass(frozen=True)
class SynthSection:
    size: int = _SYNTH.size
    cells: tuple = _SYNTH.cells
    radius: tuple = _SYNTH.radius
    crenated_fraction: tuple = _SYNTH.crenated_fraction
    crenation_amplitude: tuple = _SYNTH.crenation_amplitude
    crenation_frequency: tuple = _SYNTH.crenation_frequency
    crescent_offset: tuple = _SYNTH.crescent_offset
    background: float = _SYNTH.background
    gradient: float = _SYNTH.gradient
    cell_delta: float = _SYNTH.cell_delta
    rim_delta: float = _SYNTH.rim_delta
    noise_sigma: float = _SYNTH.noise_sigma
    min_gap: float = _SYNTH.min_gap
    max_tries: int = _SYNTH.max_tries


@dataclass(frozen=True)
class SegmenterSection:
    tree_count: int = 50
    max_depth: int = 5
    patch_side: int = 21
    per_class: int = 2000
    train_images: int = 8  # training images drawn evenly from the train-split strata


@dataclass(frozen=True)
class RfSection:
    tree_count: int = 100
    max_depth: int = 3
    features_per_node: Optional[int] = None  # None -> ceil(sqrt(bins))


@dataclass(frozen=True)
class SvmSection:
    C: float = 250.0
    gamma: float = 1.0
    tol: float = 1e-3


@dataclass(frozen=True)
class FeatureSection:
    kind: str = "roundness"
    bins: int = 20
    range: tuple = (0.0, 1.1)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    classifier: str = "rf"
    solidity_threshold: float = 0.8
    min_region_area: int = 20
    paths: PathsConfig = field(default_factory=PathsConfig)
    synth: SynthSection = field(default_factory=SynthSection)
    segmenter: SegmenterSection = field(default_factory=SegmenterSection)
    rf: RfSection = field(default_factory=RfSection)
    svm: SvmSection = field(default_factory=SvmSection)
    feature: FeatureSection = field(default_factory=FeatureSection)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    # derived module configs

    def synth_config(self) -> SynthConfig:
        return SynthConfig(seed=self.seed, **asdict(self.synth))

    def segmenter_forest(self) -> ForestConfig:
        s = self.segmenter
        return ForestConfig(tree_count=s.tree_count, max_depth=s.max_depth, seed=derive_seed(self.seed, 1))

    def feature_params(self) -> FeatureParams:
        f = self.feature
        return FeatureParams(kind=f.kind, bins=f.bins, range=tuple(f.range),
                             solidity_threshold=self.solidity_threshold, min_area=self.min_region_area)

    def rf_config(self) -> ForestConfig:
        r = self.rf
        return ForestConfig(tree_count=r.tree_count, max_depth=r.max_depth,
                            features_per_node=r.features_per_node or int(np.ceil(np.sqrt(self.feature.bins))),
                            seed=derive_seed(self.seed, 2))

    def svm_config(self) -> SvmConfig:
        s = self.svm
        return SvmConfig(C=s.C, gamma=s.gamma, tol=s.tol, seed=derive_seed(self.seed, 3))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(value, default, where: str):
    """Check a JSON value against the type of its default."""
    if isinstance(default, bool) or isinstance(value, bool):
        if type(value) is not type(default):
            raise ConfigError(f"{where}: expected {type(default).__name__}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigError(f"{where}: expected a list of {len(default)} numbers")
        return tuple(_coerce(v, d, where) for v, d in zip(value, default))
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if default is None:  # optional integer
        if value is not None and (not isinstance(value, int) or isinstance(value, bool)):
            raise ConfigError(f"{where}: expected an integer or null")
        return value
    raise ConfigError(f"{where}: unsupported value")


def _build(cls, data: dict, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    defaults = cls()
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        default = getattr(defaults, f.name)
        where = prefix + f.name
        if is_dataclass(default):
            kwargs[f.name] = _build(type(default), data[f.name], where + ".")
        else:
            kwargs[f.name] = _coerce(data[f.name], default, where)
    return replace(defaults, **kwargs)


def _set_dotted(tree: dict, key: str, value) -> None:
    parts = key.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override inside non-object key {key}")
    node[parts[-1]] = value


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def validate(cfg: RunConfig) -> RunConfig:
    """Range checks; module constructors carry their own checks too."""
    if cfg.classifier not in ("rf", "svm"):
        raise ConfigError("classifier must be 'rf' or 'svm'")
    if not 0.0 <= cfg.solidity_threshold <= 1.0:
        raise ConfigError("solidity_threshold must lie in [0, 1]")
    if cfg.min_region_area < 1:
        raise ConfigError("min_region_area must be >= 1")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    for name in ("data_dir", "model_dir", "output_dir"):
        if not getattr(cfg.paths, name):
            raise ConfigError(f"paths.{name} is required")
    s = cfg.segmenter
    if s.patch_side < 1 or s.patch_side % 2 == 0 or s.patch_side > 101:
        raise ConfigError("segmenter.patch_side must be odd and in [1, 101]")
    if min(s.tree_count, s.max_depth, s.per_class, s.train_images) < 1:
        raise ConfigError("segmenter counts must be >= 1")
    if cfg.feature.kind not in ("roundness", "form_factor"):
        raise ConfigError("feature.kind must be 'roundness' or 'form_factor'")
    if cfg.rf.features_per_node is not None and not 1 <= cfg.rf.features_per_node <= cfg.feature.bins:
        raise ConfigError("rf.features_per_node must lie in [1, feature.bins]")
    try:
        cfg.synth_config()
        cfg.segmenter_forest()
        cfg.feature_params()
        cfg.rf_config()
        cfg.svm_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def parse_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Resolve defaults < file < overrides (a dict of dotted keys) into a RunConfig."""
    tree: dict = {}
    if path:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        if text.strip():
            try:
                tree = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
            if not isinstance(tree, dict):
                raise ConfigError("config file must hold a JSON object")
    flag_tree: dict = {}
    for key, value in (overrides or {}).items():
        _set_dotted(flag_tree, key, value)
    return validate(_build(RunConfig, _merge(tree, flag_tree)))


def parse_override_tokens(tokens) -> dict:
    """``--a.b=1`` / ``--a.b 1`` pairs into {"a.b": 1}; values parse as JSON when they can."""
    out = {}
    i = 0
    tokens = list(tokens)
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"missing value for --{key}")
            i += 1
            raw = tokens[i]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out[key.replace("-", "_")] = value
        i += 1
    return out


# --- helpers -------------------------------------------------------------------------


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write_text(path: str, text: str) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _report(cfg: RunConfig, command: str, body: dict) -> dict:
    return {"command": command, "version": __version__, "seed": cfg.seed, "config": cfg.to_dict(), **body}


def _emit(report: dict, path: Optional[str], out) -> None:
    text = _dump(report)
    if path:
        _write_text(path, text)
    out.write(text)


def _pmap(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _manifest_path(args, cfg: RunConfig) -> str:
    return args.manifest or os.path.join(cfg.paths.data_dir, "manifest.csv")


def _rows(manifest: str, splits):
    try:
        rows = read_manifest(manifest)
    except (KeyError, ValueError) as exc:
        raise ScreeningError(f"bad manifest {manifest}: {exc}") from None
    return [r for r in rows if splits is None or r.split in splits]


def _splits(arg: str):
    return None if arg == "all" else tuple(s.strip() for s in arg.split(","))


def _pred_path(pred_dir: str, rel: str) -> str:
    stem, ext = os.path.splitext(rel)
    return os.path.join(pred_dir, stem + "_pred" + (ext or ".pgm"))


def _segmentation_train_rows(rows, count: int):
    """First ``count`` train images, taken round-robin over (label, concentration) strata."""
    strata: dict = {}
    for r in rows:
        if r.split == "train":
            strata.setdefault((int(r.label), r.concentration), []).append(r)
    keys = sorted(strata)
    picked, depth = [], 0
    while len(picked) < count and any(depth < len(strata[k]) for k in keys):
        for k in keys:
            if depth < len(strata[k]) and len(picked) < count:
                picked.append(strata[k][depth])
        depth += 1
    return picked


@dataclass
class _Measured:
    row: object
    descriptors: Optional[list]  # kept descriptors; None when no cell survived
    pixel_accuracy: Optional[float]


def _measure(rows, manifest: str, cfg: RunConfig, seg_model, pred_dir: Optional[str], threads: int):
    """Segment (or load cached predictions for) every row and keep its measurable cells."""
    params = cfg.feature_params()

    def one(row):
        img_path = resolve(manifest, row.path)
        cached = _pred_path(pred_dir, row.path) if pred_dir else None
        if cached and os.path.exists(cached):
            mask = read_mask(cached)
        else:
            if seg_model is None:
                raise ScreeningError(f"no cached segmentation for {row.path} and no segmenter given")
            mask = segment_image(seg_model, read_pgm(img_path))
        truth_path = mask_path_for(img_path)
        acc = pixel_accuracy(mask, read_mask(truth_path)) if os.path.exists(truth_path) else None
        descs = kept_descriptors(mask, params.solidity_threshold, params.min_area)
        return _Measured(row, descs or None, acc)

    return _pmap(one, list(rows), threads)


def _features(measured, params: FeatureParams):
    ok, rejected = [], []
    for m in measured:
        if m.descriptors is None:
            rejected.append(m)
        else:
            ok.append((m, feature_from_descriptors(m.descriptors, params)))
    return ok, rejected


def _load_segmenter(path: str):
    with open(path) as fh:
        return loads_segmenter(fh.read())


def _load_classifier(path: str):
    with open(path) as fh:
        return loads_classifier(fh.read())


def _seg_model_path(args, cfg):
    return getattr(args, "seg_model", None) or os.path.join(cfg.paths.model_dir, "segmenter.json")


def _cls_model_path(args, cfg):
    return getattr(args, "model", None) or os.path.join(cfg.paths.model_dir, "classifier.json")


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


# --- commands ------------------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig, out) -> int:
    out_dir = args.out or cfg.paths.data_dir
    manifest = synth_corpus(cfg.synth_config(), default_counts(), out_dir, n_jobs=args.threads)
    rows = read_manifest(manifest)
    counts: dict = {}
    for r in rows:
        key = f"{r.label.manifest_name}@{r.concentration}/{r.split}"
        counts[key] = counts.get(key, 0) + 1
    report = _report(cfg, "synth", {"manifest": os.path.join(out_dir, "manifest.csv"),
                                    "sample_count": len(rows), "counts": counts})
    _emit(report, args.report or os.path.join(out_dir, "synth_report.json"), out)
    return EXIT_OK


def cmd_train_seg(args, cfg: RunConfig, out) -> int:
    manifest = _manifest_path(args, cfg)
    rows = _segmentation_train_rows(_rows(manifest, ("train",)), cfg.segmenter.train_images)
    if not rows:
        raise ScreeningError("manifest has no train-split images")
    pairs = []
    for r in rows:
        p = resolve(manifest, r.path)
        pairs.append((read_pgm(p), read_mask(mask_path_for(p))))
    s = cfg.segmenter
    model, train_acc, val_acc = train_segmenter(pairs, cfg.segmenter_forest(), s.patch_side, s.per_class,
                                                seed=derive_seed(cfg.seed, 4), n_jobs=args.threads)
    model_path = _seg_model_path(args, cfg)
    _write_text(model_path, dumps_segmenter(model))
    report = _report(cfg, "train-seg", {
        "model": model_path, "training_images": [r.path for r in rows],
        "patch_train_accuracy": train_acc, "patch_val_accuracy": val_acc,
    })
    _emit(report, args.report or os.path.join(cfg.paths.output_dir, "train-seg.json"), out)
    return EXIT_OK


def cmd_segment(args, cfg: RunConfig, out) -> int:
    model = _load_segmenter(_seg_model_path(args, cfg))
    if args.image:
        if not args.out:
            raise ConfigError("segment --image needs --out")
        mask = segment_image(model, read_pgm(args.image), n_jobs=args.threads)
        write_mask(mask, args.out)
        regions = extract_regions(mask, cfg.min_region_area)
        records = measure_regions(regions, cfg.solidity_threshold)
        if args.descriptors:
            write_descriptor_csv(records, args.descriptors)
        body = {"image": args.image, "mask": args.out, "region_count": len(records),
                "kept_count": sum(r.kept for r in records)}
        _emit(_report(cfg, "segment", body), args.report, out)
        return EXIT_OK

    manifest = _manifest_path(args, cfg)
    rows = _rows(manifest, _splits(args.split))
    pred_dir = args.out_dir or os.path.join(cfg.paths.output_dir, "pred")

    def one(row):
        img_path = resolve(manifest, row.path)
        mask = segment_image(model, read_pgm(img_path))
        dest = _pred_path(pred_dir, row.path)
        os.makedirs(os.path.dirname(dest), exist_ok=True)
        write_mask(mask, dest)
        truth = mask_path_for(img_path)
        return pixel_accuracy(mask, read_mask(truth)) if os.path.exists(truth) else None

    accs = _pmap(one, rows, args.threads)
    per_split: dict = {}
    for row, acc in zip(rows, accs):
        per_split.setdefault(row.split, []).append(acc)
    body = {"pred_dir": pred_dir, "image_count": len(rows),
            "pixel_accuracy": {k: _mean(v) for k, v in sorted(per_split.items())},
            "per_image": [{"path": r.path, "pixel_accuracy": a} for r, a in zip(rows, accs)]}
    _emit(_report(cfg, "segment", body), args.report or os.path.join(cfg.paths.output_dir, "segment.json"), out)
    return EXIT_OK


def cmd_train_cls(args, cfg: RunConfig, out) -> int:
    manifest = _manifest_path(args, cfg)
    params = cfg.feature_params()
    seg_model = None if args.pred_dir else _load_segmenter(_seg_model_path(args, cfg))
    measured = _measure(_rows(manifest, _splits(args.split)), manifest, cfg, seg_model, args.pred_dir,
                        args.threads)
    ok, rejected = _features(measured, params)
    examples = [(f, m.row.label) for m, f in ok]
    model = train_classifier(examples, cfg.classifier, params, rf_config=cfg.rf_config(),
                             svm_config=cfg.svm_config())
    pred = predict_features(model, [f for f, _ in examples])
    train_acc = float(np.mean([p == label for p, (_, label) in zip(pred, examples)]))
    model_path = _cls_model_path(args, cfg)
    _write_text(model_path, dumps_classifier(model))
    report = _report(cfg, "train-cls", {
        "model": model_path, "classifier": cfg.classifier, "feature": params.kind.value,
        "sample_count": len(examples), "rejected_count": len(rejected),
        "rejected": [m.row.path for m in rejected], "train_accuracy": train_acc,
    })
    _emit(report, args.report or os.path.join(cfg.paths.output_dir, "train-cls.json"), out)
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig, out) -> int:
    manifest = _manifest_path(args, cfg)
    model = _load_classifier(_cls_model_path(args, cfg))
    seg_model = None if args.pred_dir else _load_segmenter(_seg_model_path(args, cfg))
    rows = _rows(manifest, _splits(args.split))
    if not rows:
        raise ScreeningError("no samples to evaluate")
    measured = _measure(rows, manifest, cfg, seg_model, args.pred_dir, args.threads)
    ok, rejected = _features(measured, model.params)
    pred = predict_features(model, [f for _, f in ok]) if ok else []
    metrics = evaluate_predictions([m.row.label for m, _ in ok], pred, [m.row.path for m, _ in ok],
                                   [(m.row.path, m.row.label) for m in rejected])
    body = metrics.to_dict()
    body["classifier"] = model.kind
    body["feature"] = model.params.kind.value
    body["segmentation_pixel_accuracy"] = _mean(m.pixel_accuracy for m in measured)
    _emit(_report(cfg, "eval", body), args.report or os.path.join(cfg.paths.output_dir, "eval.json"), out)
    return EXIT_OK


def _classify_path(path: str, model, seg_model):
    """Predicted label for one image, or None when no measurable cell survives."""
    mask = segment_image(seg_model, read_pgm(path))
    descs = kept_descriptors(mask, model.params.solidity_threshold, model.params.min_area)
    if not descs:
        return None, 0
    return predict_feature(model, feature_from_descriptors(descs, model.params)), len(descs)


def cmd_classify(args, cfg: RunConfig, out) -> int:
    model = _load_classifier(_cls_model_path(args, cfg))
    seg_model = _load_segmenter(_seg_model_path(args, cfg))
    label, cells = _classify_path(args.image, model, seg_model)
    body = {"image": args.image, "predicted": label.manifest_name if label is not None else None,
            "cell_count": cells, "status": "ok" if label is not None else "unreadable"}
    _emit(_report(cfg, "classify", body), args.report, out)
    return EXIT_OK if label is not None else EXIT_DATA


def cmd_screen(args, cfg: RunConfig, out) -> int:
    model = _load_classifier(_cls_model_path(args, cfg))
    seg_model = _load_segmenter(_seg_model_path(args, cfg))
    p1, _ = _classify_path(args.p1, model, seg_model)
    p2, _ = _classify_path(args.p2, model, seg_model)
    subject = args.subject_id or os.path.splitext(os.path.basename(args.p1))[0]
    if p1 is None or p2 is None:
        body = {"subject_id": subject, "p1": p1.manifest_name if p1 is not None else None,
                "p2": p2.manifest_name if p2 is not None else None, "decision": "Unreadable"}
        _emit(_report(cfg, "screen", body), args.report, out)
        return EXIT_DATA
    d = fuse_decisions(p1, p2)
    body = {"subject_id": subject, "p1": p1.manifest_name, "p2": p2.manifest_name,
            "decision": d.diagnosis.value}
    _emit(_report(cfg, "screen", body), args.report, out)
    return EXIT_OK


def cmd_grid_search(args, cfg: RunConfig, out) -> int:
    manifest = _manifest_path(args, cfg)
    params = cfg.feature_params()
    seg_model = None if args.pred_dir else _load_segmenter(_seg_model_path(args, cfg))
    sets = {}
    for split in ("train", "val"):
        measured = _measure(_rows(manifest, (split,)), manifest, cfg, seg_model, args.pred_dir, args.threads)
        ok, _ = _features(measured, params)
        if not ok:
            raise ScreeningError(f"no readable {split} samples")
        sets[split] = (np.array([f.histogram for _, f in ok]), np.array([int(m.row.label) for m, _ in ok]))
    base = cfg.svm_config()
    cells = grid_search(*sets["train"], *sets["val"], base=base)
    best = max(cells, key=lambda c: (c["val_accuracy"], -c["C"], -c["gamma"]))
    body = {"feature": params.kind.value, "grid": cells, "best": best}
    _emit(_report(cfg, "grid-search", body),
          args.report or os.path.join(cfg.paths.output_dir, "grid-search.json"), out)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train-seg": cmd_train_seg,
    "segment": cmd_segment,
    "train-cls": cmd_train_cls,
    "classify": cmd_classify,
    "screen": cmd_screen,
    "eval": cmd_eval,
    "grid-search": cmd_grid_search,
}


# --- argument parsing ------------------------------------------------------------------


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sicklescreen", description="Sickle-cell screening from blood-smear images.",
                     epilog="Any config key can be overridden with --section.key=value, e.g. --svm.gamma=2.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--threads", type=int, default=1, help="worker threads (does not change results)")
        p.add_argument("--report", help="also write the JSON report here")
        return p

    p = add("synth", "generate the synthetic corpus")
    p.add_argument("--out", help="output directory (default paths.data_dir)")

    p = add("train-seg", "train the pixel segmenter")
    p.add_argument("--manifest")
    p.add_argument("--seg-model", help="output model path")

    p = add("segment", "segment one image or a whole manifest")
    p.add_argument("--seg-model", "--model", dest="seg_model")
    p.add_argument("--image")
    p.add_argument("--out", help="mask output path (with --image)")
    p.add_argument("--descriptors", help="per-region descriptor CSV (with --image)")
    p.add_argument("--manifest")
    p.add_argument("--split", default="all", help="comma-separated splits or 'all'")
    p.add_argument("--out-dir", help="predicted-mask directory (with --manifest)")

    p = add("train-cls", "train the sample classifier")
    p.add_argument("--manifest")
    p.add_argument("--split", default="train")
    p.add_argument("--seg-model")
    p.add_argument("--pred-dir", help="reuse predicted masks written by 'segment'")
    p.add_argument("--model", help="output model path")

    p = add("classify", "classify one image")
    p.add_argument("--image", required=True)
    p.add_argument("--model")
    p.add_argument("--seg-model")

    p = add("screen", "screen a subject from its 0.1 and 0.3 images")
    p.add_argument("--p1", required=True, help="image treated at concentration 0.1")
    p.add_argument("--p2", required=True, help="image treated at concentration 0.3")
    p.add_argument("--subject-id")
    p.add_argument("--model")
    p.add_argument("--seg-model")

    p = add("eval", "evaluate a classifier on a manifest split")
    p.add_argument("--manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--model")
    p.add_argument("--seg-model")
    p.add_argument("--pred-dir")

    p = add("grid-search", "sweep SVM (C, gamma) on train/val")
    p.add_argument("--manifest")
    p.add_argument("--seg-model")
    p.add_argument("--pred-dir")
    return parser


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = parse_config(args.config, parse_override_tokens(extra))
    except (UsageError, ConfigError) as exc:
        err.write(parser.format_usage())
        err.write(f"{exc}\n")
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_USAGE
    except NoMeasurableCellsError as exc:
        err.write(f"unreadable sample: {exc}\n")
        return EXIT_DATA
    except (ScreeningError, OSError, ValueError) as exc:
        err.write(f"data error: {exc}\n")
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-failure status
        err.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
