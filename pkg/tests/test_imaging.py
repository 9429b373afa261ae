import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sicklescreen.errors import (
    DimensionMismatchError,
    DimensionOverflowError,
    MalformedHeaderError,
    TruncatedDataError,
    UnsupportedMaxvalError,
)
from sicklescreen.imaging import (
    GrayImage,
    LabelMask,
    ManifestRow,
    PixelClass,
    SampleLabel,
    encode_pgm,
    extract_patch,
    mask_path_for,
    mirror_index,
    parse_pgm,
    read_manifest,
    read_mask,
    read_pgm,
    sample_training_patches,
    write_manifest,
    write_mask,
    write_pgm,
)

images = st.tuples(st.integers(1, 12), st.integers(1, 12)).flatmap(
    lambda hw: arrays(np.uint8, hw).map(GrayImage)
)


def test_enumeration_codes():
    assert [int(c) for c in PixelClass] == [0, 1, 2]
    assert [(s.name, int(s)) for s in SampleLabel] == [("SICKLED", 0), ("TRAIT", 1), ("NORMAL", 2)]


def test_p5_decode():
    img = parse_pgm(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 7]))
    assert (img.width, img.height) == (2, 2)
    assert img.data == bytes([0, 128, 255, 7])


def test_p2_with_comments():
    raw = b"P2\n# made by hand\n3 2 # dims\n255\n0 1 2\n# mid-raster comment\n3 4 255\n"
    assert parse_pgm(raw).pixels.tolist() == [[0, 1, 2], [3, 4, 255]]


def test_p2_with_small_maxval_keeps_raw_samples():
    assert parse_pgm(b"P2 2 1 15 3 15").pixels.tolist() == [[3, 15]]


def test_write_format_is_exact(tmp_path):
    p = tmp_path / "one.pgm"
    write_pgm(GrayImage(np.array([[42]], dtype=np.uint8)), p)
    assert p.read_bytes() == b"P5\n1 1\n255\n" + bytes([0x2A])


@pytest.mark.parametrize(
    "raw, err",
    [
        (b"P5\n2 2\n65535\n" + bytes(8), UnsupportedMaxvalError),
        (b"P6\n1 1\n255\n\x00", MalformedHeaderError),
        (b"P5\n2 x\n255\n\x00", MalformedHeaderError),
        (b"P5\n2 2\n255\n\x00\x01", TruncatedDataError),
        (b"P2\n2 2\n255\n1 2 3", TruncatedDataError),
        (b"P5\n9000 1\n255\n", DimensionOverflowError),
        (b"P5\n0 3\n255\n", MalformedHeaderError),
        (b"P5\n2", MalformedHeaderError),
    ],
)
def test_parse_errors_are_distinct(raw, err):
    with pytest.raises(err):
        parse_pgm(raw)


def test_unsupported_maxval_message():
    with pytest.raises(UnsupportedMaxvalError, match="unsupported maxval"):
        parse_pgm(b"P5\n1 1\n65535\n\x00\x00")


def test_unwritable_path_raises(tmp_path):
    with pytest.raises(OSError):
        write_pgm(GrayImage(np.zeros((1, 1), np.uint8)), tmp_path / "missing" / "x.pgm")


def test_oversized_image_rejected():
    with pytest.raises(DimensionOverflowError):
        GrayImage(np.zeros((1, 8193), np.uint8))


@given(images)
def test_pgm_roundtrip_identity(img):
    assert parse_pgm(encode_pgm(img)) == img


def test_file_roundtrip(tmp_path):
    img = GrayImage(np.arange(35, dtype=np.uint8).reshape(5, 7))
    write_pgm(img, tmp_path / "a.pgm")
    assert read_pgm(tmp_path / "a.pgm") == img


def test_mask_roundtrip_uses_gray_codes(tmp_path):
    mask = LabelMask(np.array([[0, 1, 2]], dtype=np.uint8))
    write_mask(mask, tmp_path / "m.pgm")
    assert read_pgm(tmp_path / "m.pgm").pixels.tolist() == [[0, 128, 255]]
    assert read_mask(tmp_path / "m.pgm") == mask


def test_constant_patch():
    img = GrayImage(np.full((30, 30), 255, np.uint8))
    p = extract_patch(img, 3, 17, 21)
    assert len(p) == 441 and np.all(p.values == 1.0)


def test_single_pixel_mirrors():
    p = extract_patch(GrayImage(np.array([[100]], np.uint8)), 0, 0, 3)
    np.testing.assert_array_equal(p.values, np.full(9, 100 / 255))


def test_ramp_corner_patch_matches_hand_mirror():
    ramp = np.arange(9, dtype=np.uint8).reshape(3, 3) * 10
    p = extract_patch(GrayImage(ramp), 0, 0, 3)
    # rows/cols -1,0,1 reflect to 0,0,1 (edge pixel repeated)
    hand = [[0, 0, 10], [0, 0, 10], [30, 30, 40]]
    np.testing.assert_array_equal(p.values.reshape(3, 3), np.array(hand) / 255)


@pytest.mark.parametrize("cx, cy, side", [(0, 0, 4), (-1, 0, 3), (0, 3, 3)])
def test_patch_precondition_errors(cx, cy, side):
    with pytest.raises(ValueError):
        extract_patch(GrayImage(np.zeros((3, 3), np.uint8)), cx, cy, side)


@given(st.integers(-50, 50), st.integers(1, 9))
def test_mirror_index_stays_in_range(i, n):
    assert 0 <= int(mirror_index(i, n)) < n


@given(images, st.data())
def test_interior_patches_equal_raw_pixels(img, data):
    side = data.draw(st.sampled_from([1, 3, 5]))
    r = side // 2
    if img.width <= 2 * r or img.height <= 2 * r:
        return
    cx = data.draw(st.integers(r, img.width - 1 - r))
    cy = data.draw(st.integers(r, img.height - 1 - r))
    raw = img.pixels[cy - r : cy + r + 1, cx - r : cx + r + 1].ravel() / 255.0
    np.testing.assert_array_equal(extract_patch(img, cx, cy, side).values, raw)


def _mask_fixture():
    cls = np.zeros((8, 8), np.uint8)
    cls[2:6, 2:6] = 1
    cls[3:5, 3:5] = 2
    return LabelMask(cls)


def test_training_patch_counts_and_labels():
    truth = _mask_fixture()
    img = GrayImage(truth.classes * 100)
    out = sample_training_patches(img, truth, 5, rng_seed=3, side=3)
    assert len(out) == 5 + 5 + 4  # only four interior pixels exist
    for patch, cls in out:
        centre = patch.values[4] * 255
        assert round(centre) == int(cls) * 100  # label matches the truth at the centre


def test_training_patches_skip_empty_class():
    cls = np.zeros((6, 6), np.uint8)
    cls[2:4, 2:4] = 2
    out = sample_training_patches(GrayImage(cls), LabelMask(cls), 3, rng_seed=0, side=3)
    assert {c for _, c in out} == {PixelClass.BACKGROUND, PixelClass.INTERIOR}


def test_training_patches_deterministic():
    truth = _mask_fixture()
    img = GrayImage(np.arange(64, dtype=np.uint8).reshape(8, 8))
    a = sample_training_patches(img, truth, 4, rng_seed=9, side=3)
    b = sample_training_patches(img, truth, 4, rng_seed=9, side=3)
    assert [(p.values.tolist(), c) for p, c in a] == [(p.values.tolist(), c) for p, c in b]


def test_training_patches_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        sample_training_patches(GrayImage(np.zeros((4, 4), np.uint8)), _mask_fixture(), 2, 0)


def test_manifest_roundtrip(tmp_path):
    rows = [ManifestRow("a.pgm", SampleLabel.TRAIT, 0.3, 30, "train"),
            ManifestRow("b.pgm", SampleLabel.NORMAL, 0.1, 0, "test")]
    write_manifest(rows, tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "path,label,concentration,timepoint,split"
    assert read_manifest(tmp_path / "m.csv") == rows
    assert mask_path_for("x/y.pgm") == "x/y_mask.pgm"


def test_manifest_rejects_bad_values():
    with pytest.raises(ValueError):
        ManifestRow("a.pgm", SampleLabel.TRAIT, 0.2, 30, "train")
