import numpy as np
import pytest

from classalign.analysis import (ccd, ccd_for_model, class_centers, dump_features,
                                 extract_features, load_feature_dump, subsample)
from classalign.datagen import Dataset
from classalign.errors import DataError, DegenerateGeometryError
from classalign.nets import build_bundle

from oracles import ref_ccd


def test_class_centers_singletons():
    feats = np.array([[1.0, 2.0], [3.0, 4.0]])
    centers, counts = class_centers(feats, np.array([0, 1]))
    assert np.array_equal(centers, feats)
    assert counts.tolist() == [1, 1]


def test_class_centers_hand_mean():
    feats = np.array([[0.0, 0.0], [0.0, 0.2]])
    centers, _ = class_centers(feats, np.array([0, 0]), num_classes=1)
    assert np.allclose(centers, [[0.0, 0.1]])


def test_class_centers_permutation_invariant():
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(20, 3))
    labels = rng.integers(0, 4, size=20)
    perm = rng.permutation(20)
    a, ca = class_centers(feats, labels)
    b, cb = class_centers(feats[perm], labels[perm])
    assert np.allclose(a, b, atol=1e-12)
    assert np.array_equal(ca, cb)


def test_class_centers_absent_class_flagged():
    centers, counts = class_centers(np.array([[1.0]]), np.array([0]), num_classes=3)
    assert counts.tolist() == [1, 0, 0]


def test_ccd_zero_spread():
    feats = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])
    report = ccd(feats, np.array([0, 1, 0, 1]))
    assert report.per_class == [0.0, 0.0]
    assert report.mean == 0.0


def test_ccd_hand_value():
    feats = np.array([[0.0, 0.0], [0.0, 0.2], [1.0, 0.0], [1.0, 0.2]])
    labels = np.array([0, 0, 1, 1])
    report = ccd(feats, labels)
    assert abs(report.per_class[0] - 0.01) <= 1e-15
    assert abs(report.per_class[1] - 0.01) <= 1e-15


def test_ccd_matches_brute_force():
    rng = np.random.default_rng(31)
    for _ in range(40):
        n = int(rng.integers(4, 200))
        k = int(rng.integers(2, 7))
        labels = rng.integers(0, k, size=n)
        # ensure at least two classes present
        labels[0], labels[1] = 0, 1
        feats = rng.normal(size=(n, int(rng.integers(2, 6))))
        report = ccd(feats, labels)
        ref_per_class, ref_mean = ref_ccd([list(r) for r in feats], labels.tolist())
        for c, v in ref_per_class.items():
            assert abs(report.per_class[c] - v) <= 1e-12
        assert abs(report.mean - ref_mean) <= 1e-12


def test_ccd_absent_classes_excluded():
    feats = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 0.0], [5.1, 0.0]])
    labels = np.array([0, 0, 3, 3])
    report = ccd(feats, labels, num_classes=5)
    assert np.isnan(report.per_class[1]) and np.isnan(report.per_class[2])
    present = [report.per_class[0], report.per_class[3]]
    assert abs(report.mean - np.mean(present)) <= 1e-15


def test_ccd_degenerate_centers_error():
    feats = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(DegenerateGeometryError, match="0 and 1"):
        ccd(feats, np.array([0, 1]))
    with pytest.raises(DataError):
        ccd(np.array([[1.0], [2.0]]), np.array([0, 0]))


def test_ccd_similarity_invariance():
    rng = np.random.default_rng(8)
    feats = rng.normal(size=(60, 4))
    labels = rng.integers(0, 3, size=60)
    base = ccd(feats, labels)
    for _ in range(20):
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        scale = float(rng.uniform(0.1, 10.0))
        shift = rng.normal(scale=5.0, size=4)
        moved = scale * (feats @ q.T) + shift
        got = ccd(moved, labels)
        for a, b in zip(base.per_class, got.per_class):
            assert abs(a - b) <= 1e-9 * max(abs(a), 1.0)
        assert abs(base.mean - got.mean) <= 1e-9 * max(abs(base.mean), 1.0)


def test_ccd_monotone_in_noise():
    """Median per-class CCD does not decrease as cluster noise grows."""
    centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    sigmas = [0.1, 0.3, 0.9]
    medians = []
    for sigma in sigmas:
        values = []
        for seed in range(9):
            rng = np.random.default_rng(seed)
            feats = np.repeat(centers, 30, axis=0) + sigma * rng.normal(size=(90, 2))
            labels = np.repeat(np.arange(3), 30)
            values.append(ccd(feats, labels).mean)
        medians.append(float(np.median(values)))
    assert medians[0] <= medians[1] <= medians[2]


def _tiny_bundle_and_data():
    bundle = build_bundle(input_dim=2, num_classes=2, seed=4, extractor_hidden=(8,),
                          feature_dim=3)
    rng = np.random.default_rng(0)
    data = Dataset(rng.normal(size=(30, 2)), rng.integers(0, 2, size=30),
                   np.zeros(30, dtype=int))
    return bundle, data


def test_dump_round_trip_matches_in_memory(tmp_path):
    bundle, data = _tiny_bundle_and_data()
    path = tmp_path / "features.csv"
    dump_features(bundle, data, path)
    dumped = load_feature_dump(path)
    in_memory = extract_features(bundle, data)
    assert np.array_equal(dumped.x, in_memory)
    report_file = ccd(dumped.x, dumped.y)
    report_mem = ccd(in_memory, data.y)
    assert abs(report_file.mean - report_mem.mean) <= 1e-12


def test_dump_zero_extractor(tmp_path):
    bundle, data = _tiny_bundle_and_data()
    for w, b in bundle.extractor.layers:
        w.values[:] = 0.0
    path = tmp_path / "features.csv"
    dump_features(bundle, data, path)
    assert np.all(load_feature_dump(path).x == 0.0)


def test_subsample_deterministic():
    data = Dataset(np.arange(40, dtype=float).reshape(20, 2),
                   np.zeros(20, dtype=int), np.zeros(20, dtype=int))
    a = subsample(data, 7, seed=3)
    b = subsample(data, 7, seed=3)
    assert np.array_equal(a.x, b.x)
    assert len(a) == 7
    assert len(subsample(data, None, seed=0)) == 20


def test_ccd_for_model_domains():
    bundle = build_bundle(input_dim=2, num_classes=2, seed=1)
    rng = np.random.default_rng(5)
    src = Dataset(rng.normal(size=(40, 2)) + np.array([3.0, 0.0]) * rng.integers(0, 2, size=(40, 1)),
                  rng.integers(0, 2, size=40), np.zeros(40, dtype=int))
    tgt = Dataset(src.x + 0.1, src.y.copy(), np.ones(40, dtype=int))
    both = ccd_for_model(bundle, src, tgt, domain="both")
    only_src = ccd_for_model(bundle, src, tgt, domain="source")
    assert both.mean > 0 and only_src.mean > 0
    with pytest.raises(DataError):
        ccd_for_model(bundle, src, tgt, domain="everything")
