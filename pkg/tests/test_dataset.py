import csv

import numpy as np
import pytest

from fgvc.dataset import (LABELS_FILE, LabeledDataset, PartAttributes, extract_profile_features,
                          generate_synthetic, load_dataset, load_splits, render_bird, sample_pose,
                          save_dataset)
from fgvc.errors import EmptyDomainError, IngestionError
from fgvc.io import write_ppm
from fgvc.model import forward, init_params
from fgvc.rng import Rng
from oracles import nn1_accuracy


@pytest.fixture(scope="module")
def default_split():
    return generate_synthetic(seed=7)


def test_default_sizes(default_split):
    tr, te = default_split
    assert tr.images.shape == (200, 64, 64, 3) and te.images.shape == (96, 64, 64, 3)
    assert np.bincount(tr.labels).tolist() == [25] * 8
    assert tr.split == "train" and te.split == "test"


def test_pixels_in_unit_range(default_split):
    for ds in default_split:
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0


def test_same_seed_bitwise_identical():
    a, _ = generate_synthetic(4, 2, 1, 32, seed=3)
    b, _ = generate_synthetic(4, 2, 1, 32, seed=3)
    assert np.array_equal(a.images, b.images)
    c, _ = generate_synthetic(4, 2, 1, 32, seed=4)
    assert not np.array_equal(a.images, c.images)


def test_splits_disjoint(default_split):
    tr, te = default_split
    flat = {img.tobytes() for img in tr.images}
    assert not any(img.tobytes() in flat for img in te.images)


def test_classes_differ_only_in_parts():
    pose = sample_pose(Rng(5), 64)
    a = PartAttributes(beak_aspect=1.0, wing_angle=0.3)
    b = PartAttributes(beak_aspect=4.0, wing_angle=1.5)
    ia, ib = render_bird(64, pose, a), render_bird(64, pose, b)
    diff = (ia != ib).any(axis=2)
    assert diff.any()
    part_colours = [np.array(a.beak_color), np.array(a.wing_color)]

    def is_part(img):
        return np.any([np.all(np.isclose(img, c), axis=2) for c in part_colours], axis=0)

    assert np.all(is_part(ia)[diff] | is_part(ib)[diff])


def test_one_nn_well_above_chance(default_split):
    tr, te = default_split
    assert nn1_accuracy(tr.images, tr.labels, te.images, te.labels) > 2 / 8


def test_family_shift_changes_images():
    a, _ = generate_synthetic(2, 1, 1, 32, seed=1)
    b, _ = generate_synthetic(2, 1, 1, 32, seed=1, family_shift=0.5)
    assert not np.array_equal(a.images, b.images)
    assert b.meta["family_shift"] == 0.5


def test_bad_sizes():
    with pytest.raises(ValueError):
        generate_synthetic(per_class_train=0)


# -- disk round trip -----------------------------------------------------------------


def test_round_trip_within_quantisation(tmp_path):
    tr, te = generate_synthetic(3, 2, 1, 32, seed=2)
    save_dataset(tmp_path, tr, te)
    with open(tmp_path / LABELS_FILE) as fh:
        assert next(csv.reader(fh)) == ["filename", "class_name", "split"]
    ltr, lte = load_splits(tmp_path)
    assert ltr.class_names == tr.class_names
    np.testing.assert_array_equal(ltr.labels, tr.labels)
    np.testing.assert_array_equal(lte.labels, te.labels)
    assert np.abs(ltr.images - tr.images).max() <= 0.5 / 255 + 1e-12
    assert len(load_dataset(tmp_path, None)) == len(tr) + len(te)


def _write_manifest(d, rows):
    with open(d / LABELS_FILE, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filename", "class_name", "split"])
        w.writerows(rows)


def test_single_black_image(tmp_path):
    write_ppm(tmp_path / "a.ppm", np.zeros((4, 4, 3)))
    _write_manifest(tmp_path, [("a.ppm", "wren", "train")])
    ds = load_dataset(tmp_path)
    assert len(ds) == 1 and ds.class_names == ["wren"] and ds.labels.tolist() == [0]
    assert not ds.images.any()


def test_class_order_first_appearance(tmp_path):
    for n in "abc":
        write_ppm(tmp_path / f"{n}.ppm", np.zeros((2, 2, 3)))
    _write_manifest(tmp_path, [("a.ppm", "zebra", "test"), ("b.ppm", "ant", "train"),
                               ("c.ppm", "zebra", "train")])
    ds = load_dataset(tmp_path, "train")
    assert ds.class_names == ["zebra", "ant"]
    assert ds.labels.tolist() == [1, 0]


def test_ingestion_errors(tmp_path):
    with pytest.raises(IngestionError):
        load_dataset(tmp_path)
    (tmp_path / LABELS_FILE).write_text("name,label\n")
    with pytest.raises(IngestionError):
        load_dataset(tmp_path)
    write_ppm(tmp_path / "a.ppm", np.zeros((2, 2, 3)))
    write_ppm(tmp_path / "b.ppm", np.zeros((3, 3, 3)))
    _write_manifest(tmp_path, [("a.ppm", "x", "train"), ("b.ppm", "x", "train")])
    with pytest.raises(IngestionError, match="differs"):
        load_dataset(tmp_path)
    _write_manifest(tmp_path, [("missing.ppm", "x", "train")])
    with pytest.raises(IngestionError):
        load_dataset(tmp_path)
    _write_manifest(tmp_path, [("a.ppm", "x", "train")])
    with pytest.raises(EmptyDomainError):
        load_dataset(tmp_path, "test")


def test_labeled_dataset_invariants():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 4, 4, 3)), [0], ["a"])
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((1, 4, 4, 3)), [1], ["a"])


# -- profile features ----------------------------------------------------------------------


def test_pixel_features_black_and_constant():
    ds = LabeledDataset(np.stack([np.zeros((16, 16, 3)), np.full((16, 16, 3), 0.3)]), [0, 0], ["a"])
    f = extract_profile_features(ds, "pixel")
    assert f.shape == (2, 192)
    assert not f[0].any()
    np.testing.assert_allclose(f[1], 0.3, atol=1e-15)


def test_model_features_match_forward():
    p = init_params(2, 16, 2, (4, 5, 6), seed=0)
    ds = LabeledDataset(Rng(0).uniform_array((3, 16, 16, 3)), [0, 1, 0], ["a", "b"])
    f = extract_profile_features(ds, p)
    F = forward(p, ds.images).features
    np.testing.assert_allclose(f, F.mean(axis=(1, 2)), atol=1e-12)
