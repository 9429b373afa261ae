import io
import json
import os

import numpy as np
import pytest

from sicklescreen.cli import main, parse_config, parse_override_tokens
from sicklescreen.errors import ConfigError
from sicklescreen.imaging import GrayImage, read_manifest, write_pgm

SMALL = {"synth": {"size": 160, "cells": [12, 16]},
         "segmenter": {"tree_count": 8, "per_class": 300, "train_images": 4, "patch_side": 11},
         "rf": {"tree_count": 20}}


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def test_defaults_from_empty_file(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("")
    for cfg in (parse_config(str(path)), parse_config()):
        assert (cfg.segmenter.tree_count, cfg.segmenter.max_depth, cfg.segmenter.patch_side) == (50, 5, 21)
        assert (cfg.rf.tree_count, cfg.rf.max_depth) == (100, 3)
        assert (cfg.svm.C, cfg.svm.gamma) == (250.0, 1.0)
        assert cfg.solidity_threshold == 0.8 and cfg.seed == 7
        assert cfg.rf_config().features_per_node == 5  # ceil(sqrt(20))
        assert cfg.segmenter_forest().features_per_node in (None, 21)


def test_flag_overrides_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"svm": {"gamma": 1}, "seed": 3}))
    cfg = parse_config(str(path), parse_override_tokens(["--svm.gamma=2"]))
    assert cfg.svm.gamma == 2.0 and cfg.seed == 3
    cfg = parse_config(str(path), parse_override_tokens(["--svm.gamma", "0.5", "--feature.kind=form_factor"]))
    assert cfg.svm.gamma == 0.5 and cfg.feature.kind == "form_factor"


@pytest.mark.parametrize("tree", [
    {"solidity_threshold": 1.5},
    {"svm": {"C": 0}},
    {"segmenter": {"patch_side": 20}},
    {"classifier": "knn"},
    {"bogus": 1},
    {"svm": {"kernel": "poly"}},
    {"paths": {"data_dir": ""}},
    {"seed": "seven"},
])
def test_config_errors(tmp_path, tree):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(tree))
    with pytest.raises(ConfigError):
        parse_config(str(path))


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(str(bad))


def test_usage_errors(tmp_path):
    assert run("frobnicate")[0] == 1
    code, _, err = run()
    assert code == 1 and "usage" in err
    assert run("synth", "--solidity_threshold=1.5")[0] == 1
    assert run("synth", "--nope.key=1")[0] == 1
    assert run("classify")[0] == 1  # --image is required
    assert run("synth", "--threads", "0")[0] == 1


def test_unreadable_inputs(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    code, _, err = run("classify", "--image", str(bad), "--model", str(tmp_path / "m.json"),
                       "--seg-model", str(tmp_path / "s.json"))
    assert code == 2 and err


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.json"
    cfg.write_text(json.dumps(SMALL))
    data, models, outd = root / "data", root / "models", root / "out"
    common = ["--config", str(cfg), f"--paths.data_dir={data}", f"--paths.model_dir={models}",
              f"--paths.output_dir={outd}"]
    results = {}
    results["synth"] = run("synth", *common, "--seed", "7")
    results["train-seg"] = run("train-seg", *common, "--threads", "2")
    results["segment"] = run("segment", *common)
    results["train-cls"] = run("train-cls", *common, "--pred-dir", str(outd / "pred"))
    results["eval"] = run("eval", *common, "--pred-dir", str(outd / "pred"))
    results["eval-direct"] = run("eval", *common, "--report", str(root / "eval2.json"))
    return root, common, results


def test_small_pipeline_exit_codes(small_run):
    _, _, results = small_run
    for name, (code, out, err) in results.items():
        assert code == 0, (name, err)
        report = json.loads(out)
        assert report["seed"] == 7 and report["config"]["segmenter"]["tree_count"] == 8


def test_small_pipeline_outputs(small_run):
    root, _, results = small_run
    rows = read_manifest(root / "data" / "manifest.csv")
    assert len(rows) == 156 and sum(r.split == "test" for r in rows) == 27
    assert os.path.exists(root / "models" / "segmenter.json")
    assert os.path.exists(root / "models" / "classifier.json")
    seg = json.loads(results["segment"][1])
    assert seg["image_count"] == 156 and seg["pixel_accuracy"]["test"] > 0.8
    ev = json.loads(results["eval"][1])
    assert sum(map(sum, ev["confusion"])) + ev["rejected_count"] == 27
    assert json.loads(results["eval-direct"][1])["confusion"] == ev["confusion"]
    assert (root / "out" / "eval.json").read_text() == results["eval"][1]


def test_small_single_image_commands(small_run, tmp_path):
    root, common, _ = small_run
    img = str(root / "data" / "normal_c1_000.pgm")
    code, out, _ = run("classify", *common, "--image", img)
    assert code == 0 and json.loads(out)["predicted"] in ("sickled", "trait", "normal")
    code, out, _ = run("screen", *common, "--p1", img, "--p2", str(root / "data" / "normal_c3_000.pgm"),
                       "--subject-id", "s1")
    report = json.loads(out)
    assert code == 0 and report["subject_id"] == "s1"
    assert report["decision"] in ("Diseased", "Trait", "Normal")
    mask, csv_path = tmp_path / "m.pgm", tmp_path / "d.csv"
    code, out, _ = run("segment", *common, "--image", img, "--out", str(mask), "--descriptors", str(csv_path))
    assert code == 0 and mask.exists()
    assert csv_path.read_text().startswith("region_id,area,perimeter,form_factor,roundness,solidity,kept")


def test_screen_unreadable_subject(small_run, tmp_path):
    root, common, _ = small_run
    blank = tmp_path / "blank.pgm"
    write_pgm(GrayImage(np.full((64, 64), 150, np.uint8)), blank)
    code, out, _ = run("screen", *common, "--p1", str(blank), "--p2", str(blank))
    assert code == 2 and json.loads(out)["decision"] == "Unreadable"
    code, out, _ = run("classify", *common, "--image", str(blank))
    assert code == 2 and json.loads(out)["status"] == "unreadable"


def test_grid_search_report(small_run):
    root, common, _ = small_run
    code, out, _ = run("grid-search", *common, "--pred-dir", str(root / "out" / "pred"))
    report = json.loads(out)
    assert code == 0 and len(report["grid"]) == 20
    assert report["best"] in report["grid"]
