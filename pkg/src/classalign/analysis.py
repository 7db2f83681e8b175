"""Class-level alignment measurement.

The class center distance (CCD) for class i averages, over every other
present class j, the ratio of class i's mean squared distance to its own
center over the squared distance between the two centers. Low values mean
tight classes that sit far apart: good class-level alignment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .datagen import Dataset
from .errors import DataError, DegenerateGeometryError
from .nets import ModelBundle, feature_extract

CENTER_EPS = 1e-12


@dataclass
class CcdReport:
    per_class: list[float]      # NaN for classes with no samples
    mean: float                 # arithmetic mean over present classes
    counts: list[int]
    feature_dim: int


def class_centers(features: np.ndarray, labels: np.ndarray,
                  num_classes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-class feature means; returns (centers, counts) with absent rows zero."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DataError(f"labels outside [0, {num_classes})")
    centers = np.zeros((num_classes, features.shape[1]))
    counts = np.zeros(num_classes, dtype=np.int64)
    for k in range(num_classes):
        mask = labels == k
        counts[k] = mask.sum()
        if counts[k]:
            centers[k] = features[mask].mean(axis=0)
    return centers, counts


def ccd(features: np.ndarray, labels: np.ndarray,
        num_classes: int | None = None) -> CcdReport:
    """Intra-class compactness over inter-class separation, per class.

    Classes without samples are excluded from both the pairwise sum and
    its normalizer. Coincident centers are an error rather than an
    infinity, so a degenerate embedding cannot silently poison the mean.
    """
    features = np.asarray(features, dtype=np.float64)
    centers, counts = class_centers(features, labels, num_classes)
    present = np.flatnonzero(counts)
    if len(present) < 2:
        raise DataError("CCD needs at least 2 classes with samples")

    intra = {}
    for k in present:
        diffs = features[labels == k] - centers[k]
        intra[k] = float((diffs * diffs).sum(axis=1).mean())

    per_class = [float("nan")] * len(counts)
    for i in present:
        total = 0.0
        for j in present:
            if j == i:
                continue
            sep = float(((centers[i] - centers[j]) ** 2).sum())
            if sep < CENTER_EPS:
                raise DegenerateGeometryError(
                    f"class centers {i} and {j} coincide (separation {sep:.3e})")
            total += intra[i] / sep
        per_class[i] = total / (len(present) - 1)

    mean = float(np.mean([per_class[i] for i in present]))
    return CcdReport(per_class=per_class, mean=mean,
                     counts=[int(c) for c in counts], feature_dim=features.shape[1])


def extract_features(bundle: ModelBundle, dataset: Dataset) -> np.ndarray:
    return feature_extract(bundle.extractor, dataset.x).values


def subsample(dataset: Dataset, cap: int | None, seed: int) -> Dataset:
    """Deterministic cap on dataset size; a fixed seed gives a fixed subsample."""
    if cap is None or len(dataset) <= cap:
        return dataset
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(dataset), size=cap, replace=False))
    return dataset.subset(idx)


def ccd_for_model(bundle: ModelBundle, source: Dataset, target: Dataset,
                  domain: str = "both", cap: int | None = 2000,
                  seed: int = 0) -> CcdReport:
    """CCD over extracted features, using ground-truth labels for both domains."""
    parts = []
    if domain in ("both", "source"):
        parts.append(subsample(source, cap, seed))
    if domain in ("both", "target"):
        parts.append(subsample(target, cap, seed + 1))
    if not parts:
        raise DataError(f"unknown domain filter {domain!r}")
    data = Dataset.concatenate(parts)
    if (data.y < 0).any():
        raise DataError("CCD needs labeled samples")
    return ccd(extract_features(bundle, data), data.y, bundle.num_classes)


def dump_features(bundle: ModelBundle, dataset: Dataset, path,
                  cap: int | None = None, seed: int = 0):
    """Write one CSV row per sample: domain, label, then the feature vector."""
    data = subsample(dataset, cap, seed)
    feats = extract_features(bundle, data)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["domain", "label"] + [f"f{i}" for i in range(feats.shape[1])])
        for i in range(len(data)):
            writer.writerow([int(data.domain[i]), int(data.y[i])]
                            + [repr(float(v)) for v in feats[i]])


def load_feature_dump(path) -> Dataset:
    """Feature dumps share the dataset CSV schema, so the same loader applies."""
    from .datagen import load_csv_dataset
    return load_csv_dataset(path)
