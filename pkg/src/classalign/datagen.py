"""Synthetic two-domain datasets and the CSV schema for external data.

The generator places K isotropic Gaussian clusters on a circle in the
first two feature dimensions; the target domain redraws the same clusters
and pushes them through a scale/rotate/translate shift, giving a
controllable, visible domain gap.

CSV schema: header `domain,label,f0,...,f{m-1}`; domain 0=source 1=target;
label -1 marks an unlabeled sample; floats round-trip at full precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import CsvParseError, DataError, ParameterError

SOURCE = 0
TARGET = 1


@dataclass
class Dataset:
    """A batch of samples: features, labels (-1 = unlabeled), per-row domain."""

    x: np.ndarray
    y: np.ndarray
    domain: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.domain = np.asarray(self.domain, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (len(self.x),) \
                or self.domain.shape != (len(self.x),):
            raise DataError("features, labels, and domains must have matching lengths")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def feature_dim(self) -> int:
        return self.x.shape[1]

    def subset(self, mask: np.ndarray) -> "Dataset":
        return Dataset(self.x[mask], self.y[mask], self.domain[mask])

    def domain_split(self) -> tuple["Dataset", "Dataset"]:
        return self.subset(self.domain == SOURCE), self.subset(self.domain == TARGET)

    def unlabeled(self) -> "Dataset":
        return Dataset(self.x, np.full(len(self), -1, dtype=np.int64), self.domain)

    @staticmethod
    def concatenate(parts: list["Dataset"]) -> "Dataset":
        return Dataset(np.concatenate([p.x for p in parts]),
                       np.concatenate([p.y for p in parts]),
                       np.concatenate([p.domain for p in parts]))


@dataclass
class ShiftSpec:
    """Scale per dimension, rotate in the first two dimensions, then translate."""

    rotation: float = 0.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(2))
    scale: np.ndarray | None = None

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.scale is not None:
            self.scale = np.asarray(self.scale, dtype=np.float64)
            if (self.scale <= 0).any():
                raise ParameterError("scale factors must be strictly positive")

    @staticmethod
    def identity(dim: int) -> "ShiftSpec":
        return ShiftSpec(0.0, np.zeros(dim), np.ones(dim))

    def matrix(self, dim: int) -> np.ndarray:
        """The rotation applied after scaling, as a dim x dim matrix."""
        r = np.eye(dim)
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        r[0, 0], r[0, 1], r[1, 0], r[1, 1] = c, -s, s, c
        return r


def apply_shift(samples: Dataset, shift: ShiftSpec) -> Dataset:
    """x <- R(theta) (x * s) + t per sample; labels and domains unchanged."""
    m = samples.feature_dim
    if shift.rotation != 0.0 and m < 2:
        raise ParameterError("rotation needs at least 2 feature dimensions")
    x = samples.x
    if shift.scale is not None:
        x = x * shift.scale
    x = x @ shift.matrix(m).T
    x = x + shift.translation
    return Dataset(x, samples.y.copy(), samples.domain.copy())


def _class_centers(num_classes: int, dim: int, radius: float) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centers = np.zeros((num_classes, dim))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def gen_gaussian_domains(num_classes: int, dim: int, n_per_class: int,
                         radius: float, sigma: float, shift: ShiftSpec,
                         seed: int) -> tuple[Dataset, Dataset]:
    """Sample both domains: K circle-of-Gaussians classes, target shifted.

    The target set is an independent redraw from the source distribution,
    transformed by the shift. Both sets come back labeled; training code is
    responsible for ignoring target labels.
    """
    if num_classes < 2 or dim < 2 or n_per_class < 1:
        raise ParameterError("need K >= 2, dim >= 2, and n_per_class >= 1")
    centers = _class_centers(num_classes, dim, radius)
    rng_s, rng_t = [np.random.default_rng(s)
                    for s in np.random.SeedSequence(seed).spawn(2)]

    def draw(rng) -> Dataset:
        xs, ys = [], []
        for k in range(num_classes):
            xs.append(centers[k] + sigma * rng.standard_normal((n_per_class, dim)))
            ys.append(np.full(n_per_class, k, dtype=np.int64))
        return Dataset(np.concatenate(xs), np.concatenate(ys),
                       np.zeros(num_classes * n_per_class, dtype=np.int64))

    source = draw(rng_s)
    target = apply_shift(draw(rng_t), shift)
    target.domain[:] = TARGET
    return source, target


# -- CSV round trip --------------------------------------------------------

def save_csv_dataset(dataset: Dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["domain", "label"] + [f"f{i}" for i in range(dataset.feature_dim)])
        for i in range(len(dataset)):
            writer.writerow([int(dataset.domain[i]), int(dataset.y[i])]
                            + [repr(float(v)) for v in dataset.x[i]])


def load_csv_dataset(path) -> Dataset:
    """Parse a dataset CSV; malformed rows fail with their line number."""
    xs, ys, domains = [], [], []
    width = None
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(path, 1, "empty file") from None
        if header[:2] != ["domain", "label"]:
            raise CsvParseError(path, 1, f"header must start with domain,label, got {header[:2]}")
        width = len(header) - 2
        if width < 1 or header[2:] != [f"f{i}" for i in range(width)]:
            raise CsvParseError(path, 1, "feature columns must be named f0..f{m-1}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != width + 2:
                raise CsvParseError(path, line_no,
                                    f"expected {width + 2} fields, got {len(row)}")
            try:
                domain = int(row[0])
                label = int(row[1])
                feats = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise CsvParseError(path, line_no, str(exc)) from None
            if domain not in (SOURCE, TARGET):
                raise CsvParseError(path, line_no, f"domain must be 0 or 1, got {domain}")
            if label < -1:
                raise CsvParseError(path, line_no, f"label must be >= -1, got {label}")
            if not all(np.isfinite(feats)):
                raise CsvParseError(path, line_no, "non-finite feature value")
            domains.append(domain)
            ys.append(label)
            xs.append(feats)
    if not xs:
        raise CsvParseError(path, 2, "no data rows")
    return Dataset(np.asarray(xs), np.asarray(ys), np.asarray(domains))
