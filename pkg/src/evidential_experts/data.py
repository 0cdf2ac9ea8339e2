"""Synthetic long-tailed dataset construction and CSV ingestion.

Training counts follow an exponential decay across class indexes, fixed by
the most frequent class and the imbalance factor (the ratio of the most to
the least frequent count); test counts are equal across classes.  Classes
are partitioned into head/medium/tail regions by their training count.
Features come from isotropic Gaussians whose means sit on a circle, and
out-of-distribution samples come from a shell far outside every class
support.  All generation is a pure function of (spec, geometry, seed), with
an independent substream per class.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .validation import check_features, check_labels

REGIONS = ("head", "medium", "tail")

_TRAIN_STREAM = 0
_TEST_STREAM = 1
_OOD_STREAM = 2


class CsvFormatError(ValueError):
    """CSV parse failure; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class LongTailSpec:
    """Per-class training counts, region labels, and the balanced test count."""

    num_classes: int
    max_count: int
    imbalance_factor: float
    counts: tuple[int, ...]
    regions: tuple[str, ...]
    test_count: int

    def region_of_class(self) -> tuple[str, ...]:
        return self.regions

    def classes_in_region(self, region: str) -> list[int]:
        return [k for k, r in enumerate(self.regions) if r == region]


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "features", check_features(self.features))
        object.__setattr__(self, "labels", check_labels(self.labels))
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels length mismatch")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True, eq=False)
class OODDataset:
    features: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "features", check_features(self.features))

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class GaussianCircleGeometry:
    """Isotropic Gaussian classes with means evenly spaced on a circle.

    The circle lives in the first two coordinates; extra dimensions are pure
    noise around zero.
    """

    num_classes: int
    dim: int = 2
    radius: float = 4.0
    sigma: float = 0.8

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if not np.isfinite(self.radius) or self.radius <= 0.0:
            raise ValueError("radius must be positive")
        if not np.isfinite(self.sigma) or self.sigma <= 0.0:
            raise ValueError("sigma must be positive")

    def class_means(self) -> np.ndarray:
        angles = 2.0 * np.pi * np.arange(self.num_classes) / self.num_classes
        means = np.zeros((self.num_classes, self.dim))
        means[:, 0] = self.radius * np.cos(angles)
        means[:, 1] = self.radius * np.sin(angles)
        return means


def make_spec(num_classes: int, max_count: int, imbalance_factor: float,
              test_count: int = 100, head_threshold: float = 100,
              tail_threshold: float = 20) -> LongTailSpec:
    """Exponential-decay class counts with head/medium/tail regions.

    Count for class k is max(1, round(max_count * IF^(-k / (K - 1)))), so
    class 0 gets max_count and class K-1 gets max_count / IF.  A class is
    head when its count exceeds head_threshold, tail when below
    tail_threshold, medium otherwise.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if imbalance_factor < 1.0 or not np.isfinite(imbalance_factor):
        raise ValueError("imbalance_factor must be >= 1")
    if max_count < imbalance_factor:
        raise ValueError("max_count must be >= imbalance_factor")
    if test_count < 1:
        raise ValueError("test_count must be >= 1")
    if tail_threshold > head_threshold:
        raise ValueError("tail_threshold must not exceed head_threshold")

    counts = []
    for k in range(num_classes):
        raw = max_count * imbalance_factor ** (-k / (num_classes - 1))
        counts.append(max(1, int(math.floor(raw + 0.5))))
    regions = tuple(
        "head" if n > head_threshold else ("tail" if n < tail_threshold else "medium")
        for n in counts
    )
    return LongTailSpec(
        num_classes=num_classes,
        max_count=max_count,
        imbalance_factor=float(imbalance_factor),
        counts=tuple(counts),
        regions=regions,
        test_count=test_count,
    )


def _sample_classes(spec: LongTailSpec, geometry: GaussianCircleGeometry,
                    seed: int, stream: int, per_class: list[int],
                    provenance: str) -> LabeledDataset:
    if spec.num_classes != geometry.num_classes:
        raise ValueError("spec and geometry disagree on the class count")
    means = geometry.class_means()
    blocks = []
    labels = []
    for k, n_k in enumerate(per_class):
        rng = np.random.default_rng([seed, stream, k])
        blocks.append(means[k] + geometry.sigma * rng.standard_normal((n_k, geometry.dim)))
        labels.append(np.full(n_k, k, dtype=np.int64))
    return LabeledDataset(np.vstack(blocks), np.concatenate(labels), provenance)


def sample_train(spec: LongTailSpec, geometry: GaussianCircleGeometry,
                 seed: int) -> LabeledDataset:
    """Long-tailed training set: exactly spec.counts[k] samples of class k."""
    return _sample_classes(
        spec, geometry, seed, _TRAIN_STREAM, list(spec.counts),
        provenance=f"train(seed={seed})",
    )


def sample_test(spec: LongTailSpec, geometry: GaussianCircleGeometry,
                seed: int) -> LabeledDataset:
    """Balanced test set: exactly spec.test_count samples per class."""
    return _sample_classes(
        spec, geometry, seed, _TEST_STREAM, [spec.test_count] * spec.num_classes,
        provenance=f"test(seed={seed})",
    )


def sample_ood(geometry: GaussianCircleGeometry, count: int, margin: float,
               seed: int) -> OODDataset:
    """Shell of points far outside every class support.

    With base = max mean norm + 3 sigma, radii are uniform on
    [margin * base + max mean norm, margin * base + max mean norm + sigma]
    and directions uniform on the sphere, which puts every point at distance
    at least margin * base from every class mean.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if not np.isfinite(margin) or margin <= 0.0:
        raise ValueError("margin must be positive")
    means = geometry.class_means()
    max_norm = float(np.linalg.norm(means, axis=1).max())
    base = max_norm + 3.0 * geometry.sigma
    inner = margin * base + max_norm
    rng = np.random.default_rng([seed, _OOD_STREAM, 0])
    directions = rng.standard_normal((count, geometry.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = rng.uniform(inner, inner + geometry.sigma, size=count)
    return OODDataset(directions * radii[:, None],
                      provenance=f"ood(seed={seed},margin={margin})")


# --- CSV formats ---------------------------------------------------------
#
# Labeled:   header "f0,...,f{d-1},label"; float cells printed with 17
#            significant digits; integer labels.
# Unlabeled: same without the label column.

_FLOAT_FMT = "%.17g"


def _feature_header(dim: int) -> list[str]:
    return [f"f{i}" for i in range(dim)]


def write_csv(dataset: LabeledDataset, path) -> None:
    """Write a labeled dataset; values round-trip losslessly."""
    rows = [",".join(_feature_header(dataset.dim) + ["label"])]
    for x, y in zip(dataset.features, dataset.labels):
        rows.append(",".join([_FLOAT_FMT % v for v in x] + [str(int(y))]))
    _atomic_write_text(path, "\n".join(rows) + "\n")


def write_ood_csv(dataset: OODDataset, path) -> None:
    """Write an unlabeled dataset (no label column)."""
    rows = [",".join(_feature_header(dataset.dim))]
    for x in dataset.features:
        rows.append(",".join(_FLOAT_FMT % v for v in x))
    _atomic_write_text(path, "\n".join(rows) + "\n")


def _read_rows(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CsvFormatError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise CsvFormatError("empty dataset: file has no header", line=1)
    return lines


def _parse_header(header: str, want_label: bool) -> int:
    cells = header.split(",")
    expected_label = cells[-1] == "label" if cells else False
    feature_cells = cells[:-1] if expected_label else cells
    if want_label and not expected_label:
        raise CsvFormatError("missing label column in header", line=1)
    if not want_label and expected_label:
        raise CsvFormatError("unexpected label column in header", line=1)
    for i, cell in enumerate(feature_cells):
        if cell != f"f{i}":
            raise CsvFormatError(
                f"bad header cell {cell!r}; expected 'f{i}'", line=1
            )
    if not feature_cells:
        raise CsvFormatError("header declares no feature columns", line=1)
    return len(feature_cells)


def _parse_float(cell: str, line: int) -> float:
    try:
        value = float(cell)
    except ValueError as exc:
        raise CsvFormatError(f"non-numeric cell {cell!r}", line=line) from exc
    if not math.isfinite(value):
        raise CsvFormatError(f"non-finite cell {cell!r}", line=line)
    return value


def load_csv(path, num_classes: int | None = None) -> LabeledDataset:
    """Read a labeled dataset; errors carry the offending line number."""
    lines = _read_rows(path)
    dim = _parse_header(lines[0], want_label=True)
    features, labels = [], []
    for lineno, row in enumerate(lines[1:], start=2):
        if not row.strip():
            continue
        cells = row.split(",")
        if len(cells) != dim + 1:
            raise CsvFormatError(
                f"expected {dim + 1} cells, found {len(cells)}", line=lineno
            )
        features.append([_parse_float(c, lineno) for c in cells[:-1]])
        label_cell = cells[-1].strip()
        try:
            label = int(label_cell)
        except ValueError as exc:
            raise CsvFormatError(
                f"non-integer label {label_cell!r}", line=lineno
            ) from exc
        if label < 0 or (num_classes is not None and label >= num_classes):
            bound = num_classes if num_classes is not None else "inf"
            raise CsvFormatError(
                f"label {label} out of range [0, {bound})", line=lineno
            )
        labels.append(label)
    if not features:
        raise CsvFormatError("empty dataset: no data rows", line=len(lines))
    return LabeledDataset(np.array(features), np.array(labels, dtype=np.int64),
                          provenance=os.fspath(path))


def load_ood_csv(path) -> OODDataset:
    """Read an unlabeled dataset; errors carry the offending line number."""
    lines = _read_rows(path)
    dim = _parse_header(lines[0], want_label=False)
    features = []
    for lineno, row in enumerate(lines[1:], start=2):
        if not row.strip():
            continue
        cells = row.split(",")
        if len(cells) != dim:
            raise CsvFormatError(
                f"expected {dim} cells, found {len(cells)}", line=lineno
            )
        features.append([_parse_float(c, lineno) for c in cells])
    if not features:
        raise CsvFormatError("empty dataset: no data rows", line=len(lines))
    return OODDataset(np.array(features), provenance=os.fspath(path))


def _atomic_write_text(path, payload: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-csv-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
