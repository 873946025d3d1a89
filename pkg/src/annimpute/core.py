"""Dataset model: texts, sparse annotation matrix, label schema, row statistics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_SENTINEL = 10.0


class DataError(ValueError):
    """Raised when input files or matrices violate the dataset contract."""


@dataclass(frozen=True)
class LabelSchema:
    min_label: int
    max_label: int
    label_names: tuple[str, ...] | None = None
    # SBIC-style half labels are stored as round(value * scale)
    scale: int = 1

    def __post_init__(self):
        if not self.min_label < self.max_label:
            raise DataError(f"min_label {self.min_label} must be < max_label {self.max_label}")
        if self.label_names is not None:
            names = tuple(self.label_names)
            object.__setattr__(self, "label_names", names)
            if len(names) != self.n_labels:
                raise DataError(f"expected {self.n_labels} label names, got {len(names)}")
        if self.scale < 1:
            raise DataError("scale must be a positive integer")

    @property
    def n_labels(self) -> int:
        return self.max_label - self.min_label + 1

    @property
    def labels(self) -> range:
        return range(self.min_label, self.max_label + 1)

    @property
    def span(self) -> int:
        return self.max_label - self.min_label

    def contains(self, label: int) -> bool:
        return self.min_label <= label <= self.max_label

    def index(self, label: int) -> int:
        return label - self.min_label

    def name(self, label: int) -> str:
        if self.label_names is None:
            return str(self.display_value(label))
        return self.label_names[self.index(label)]

    def display_value(self, label: int):
        """Original-scale value for a stored integer label."""
        if self.scale == 1:
            return label
        return label / self.scale

    def parse_cell(self, raw: str) -> int:
        value = float(raw) * self.scale
        if not math.isfinite(value) or value != int(value):
            raise DataError(f"non-integer cell {raw!r}")
        return int(value)

    def to_json(self) -> dict:
        out = {"min_label": self.min_label, "max_label": self.max_label}
        if self.label_names is not None:
            out["label_names"] = list(self.label_names)
        if self.scale != 1:
            out["scale"] = self.scale
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "LabelSchema":
        names = obj.get("label_names")
        return cls(
            int(obj["min_label"]),
            int(obj["max_label"]),
            tuple(names) if names is not None else None,
            int(obj.get("scale", 1)),
        )

    @classmethod
    def load(cls, path) -> "LabelSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class RowStats:
    majority_label: int
    soft_label: np.ndarray
    variance: float
    disagreement_rate: float
    n_annotations: int


def label_stats(labels: Sequence[int] | np.ndarray, schema: LabelSchema) -> RowStats:
    """Descriptive statistics for one item's annotations.

    Majority ties resolve to the smallest label; variance is the population
    variance.
    """
    arr = np.asarray(labels, dtype=np.int64)
    n = arr.size
    if n == 0:
        raise DataError("row has no annotations")
    counts = np.bincount(arr - schema.min_label, minlength=schema.n_labels)
    if counts.size > schema.n_labels:
        raise DataError("label out of range")
    majority_idx = int(np.argmax(counts))  # first max == smallest label
    soft = counts / n
    mean = arr.mean()
    variance = float(np.mean((arr - mean) ** 2))
    disagreement = (n - int(counts[majority_idx])) / n
    return RowStats(majority_idx + schema.min_label, soft, variance, disagreement, n)


class AnnotationMatrix:
    """Sparse N x M integer label matrix.

    Cells are stored as parallel index/label arrays sorted by (item, annotator);
    missing cells have no entry. Instances are treated as immutable.
    """

    def __init__(self, n_items: int, n_annotators: int, cells: Mapping[tuple[int, int], int] | Iterable[tuple[int, int, int]], schema: LabelSchema, *, allow_empty_rows: bool = False):
        if isinstance(cells, Mapping):
            triples = [(i, j, lab) for (i, j), lab in cells.items()]
        else:
            triples = [tuple(c) for c in cells]
        seen = set()
        for i, j, lab in triples:
            if not (0 <= i < n_items and 0 <= j < n_annotators):
                raise DataError(f"cell ({i}, {j}) outside {n_items}x{n_annotators}")
            if (i, j) in seen:
                raise DataError(f"duplicate cell ({i}, {j})")
            seen.add((i, j))
            if not schema.contains(lab):
                raise DataError(f"label out of range: {lab} at ({i}, {j}) not in [{schema.min_label}, {schema.max_label}]")
        triples.sort()
        self.n_items = int(n_items)
        self.n_annotators = int(n_annotators)
        self.schema = schema
        self.items = np.array([t[0] for t in triples], dtype=np.int64)
        self.annotators = np.array([t[1] for t in triples], dtype=np.int64)
        self.labels = np.array([t[2] for t in triples], dtype=np.int64)
        for arr in (self.items, self.annotators, self.labels):
            arr.setflags(write=False)
        if not allow_empty_rows:
            counts = np.bincount(self.items, minlength=self.n_items)
            empty = np.flatnonzero(counts == 0)
            if empty.size:
                raise DataError(f"item {int(empty[0])} has zero annotations")

    @classmethod
    def from_dense(cls, dense, schema: LabelSchema, missing=None, **kw) -> "AnnotationMatrix":
        """Build from a dense array; NaN (or ``missing``) marks absent cells."""
        arr = np.asarray(dense, dtype=float)
        if missing is None:
            mask = ~np.isnan(arr)
        else:
            mask = arr != missing
        ii, jj = np.nonzero(mask)
        vals = arr[ii, jj]
        if np.any(vals != np.round(vals)):
            raise DataError("non-integer cell in dense matrix")
        return cls(arr.shape[0], arr.shape[1], zip(ii.tolist(), jj.tolist(), vals.astype(np.int64).tolist()), schema, **kw)

    @property
    def n_cells(self) -> int:
        return int(self.labels.size)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_items, self.n_annotators

    def cells(self) -> dict[tuple[int, int], int]:
        return {(int(i), int(j)): int(v) for i, j, v in zip(self.items, self.annotators, self.labels)}

    def triples(self) -> list[tuple[int, int, int]]:
        return list(zip(self.items.tolist(), self.annotators.tolist(), self.labels.tolist()))

    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[self.items, self.annotators] = True
        return m

    def row(self, item: int) -> np.ndarray:
        return self.labels[self.items == item]

    def row_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def annotator_counts(self) -> np.ndarray:
        return np.bincount(self.annotators, minlength=self.n_annotators)

    def is_complete(self) -> bool:
        return self.n_cells == self.n_items * self.n_annotators

    def to_dense(self, fill=np.nan) -> np.ndarray:
        out = np.full(self.shape, fill, dtype=float)
        out[self.items, self.annotators] = self.labels
        return out

    def subset_items(self, items: Sequence[int]) -> "AnnotationMatrix":
        """Rows ``items`` (in the given order), reindexed from 0."""
        remap = {int(old): new for new, old in enumerate(items)}
        keep = [(remap[i], j, v) for i, j, v in self.triples() if i in remap]
        return AnnotationMatrix(len(remap), self.n_annotators, keep, self.schema)

    def without(self, removed: Iterable[tuple[int, int]]) -> "AnnotationMatrix":
        drop = set(removed)
        keep = [t for t in self.triples() if (t[0], t[1]) not in drop]
        return AnnotationMatrix(self.n_items, self.n_annotators, keep, self.schema)

    def __eq__(self, other):
        if not isinstance(other, AnnotationMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.schema == other.schema
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.annotators, other.annotators)
            and np.array_equal(self.labels, other.labels)
        )

    def __repr__(self):
        return f"AnnotationMatrix({self.n_items}x{self.n_annotators}, cells={self.n_cells})"


@dataclass(frozen=True)
class Dataset:
    texts: list[str]
    matrix: AnnotationMatrix
    name: str = field(default="dataset", compare=False)

    def __post_init__(self):
        if len(self.texts) != self.matrix.n_items:
            raise DataError(f"row-count mismatch: {len(self.texts)} texts vs {self.matrix.n_items} annotation rows")


def row_stats(matrix: AnnotationMatrix, item: int) -> RowStats:
    if not 0 <= item < matrix.n_items:
        raise IndexError(f"item {item} out of range")
    return label_stats(matrix.row(item), matrix.schema)


def dense_row_stats(dense: np.ndarray, schema: LabelSchema) -> list[RowStats]:
    """Stats for every row of a complete integer matrix."""
    return [label_stats(row, schema) for row in np.asarray(dense, dtype=np.int64)]


def densify(matrix: AnnotationMatrix, sentinel: float = DEFAULT_SENTINEL) -> np.ndarray:
    return matrix.to_dense(fill=sentinel)


# -- file formats -----------------------------------------------------------

def read_texts(path) -> list[str]:
    texts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh.read().splitlines():
            # optional "id<TAB>text"
            if "\t" in line:
                line = line.split("\t", 1)[1]
            texts.append(line)
    return texts


def write_texts(path, texts: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, t in enumerate(texts):
            if "\n" in t or "\t" in t:
                raise DataError(f"text {i} contains a tab or newline")
            fh.write(t + "\n")


def read_grid(path, schema: LabelSchema) -> tuple[int, int, list[tuple[int, int, int]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh)]
    if not rows:
        raise DataError(f"{path}: empty annotations file")
    width = len(rows[0])
    cells = []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i} has {len(row)} columns, expected {width}")
        for j, raw in enumerate(row):
            raw = raw.strip()
            if raw == "":
                continue
            try:
                lab = schema.parse_cell(raw)
            except ValueError as exc:
                raise DataError(f"{path}: non-integer cell {raw!r} at ({i}, {j})") from exc
            if not schema.contains(lab):
                raise DataError(f"{path}: label out of range: {raw} at ({i}, {j})")
            cells.append((i, j, lab))
    return len(rows), width, cells


def write_grid(path, dense_or_matrix, schema: LabelSchema | None = None) -> None:
    """Write an annotations CSV; empty string marks a missing cell."""
    if isinstance(dense_or_matrix, AnnotationMatrix):
        schema = dense_or_matrix.schema
        dense = dense_or_matrix.to_dense()
    else:
        dense = np.asarray(dense_or_matrix, dtype=float)
    scale = schema.scale if schema is not None else 1
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in dense:
            out = []
            for v in row:
                if np.isnan(v):
                    out.append("")
                elif scale == 1:
                    out.append(str(int(v)))
                else:
                    out.append(repr(int(v) / scale))
            w.writerow(out)


def load_matrix(path, schema: LabelSchema) -> AnnotationMatrix:
    n, m, cells = read_grid(path, schema)
    return AnnotationMatrix(n, m, cells, schema)


def read_complete_grid(path, schema: LabelSchema) -> np.ndarray:
    """Read a fully observed annotations CSV (e.g. an imputed matrix)."""
    n, m, cells = read_grid(path, schema)
    if len(cells) != n * m:
        raise DataError(f"{path}: expected a complete matrix, found {n * m - len(cells)} missing cells")
    out = np.empty((n, m), dtype=np.int64)
    for i, j, v in cells:
        out[i, j] = v
    return out


def load_dataset(texts_path, annotations_path, schema: LabelSchema, name: str | None = None) -> Dataset:
    texts = read_texts(texts_path)
    n, m, cells = read_grid(annotations_path, schema)
    if n != len(texts):
        raise DataError(f"row-count mismatch: {len(texts)} texts vs {n} annotation rows")
    matrix = AnnotationMatrix(n, m, cells, schema)
    return Dataset(texts, matrix, name or Path(texts_path).stem)


def save_dataset(dataset: Dataset, texts_path, annotations_path, schema_path=None) -> None:
    write_texts(texts_path, dataset.texts)
    write_grid(annotations_path, dataset.matrix)
    if schema_path is not None:
        with open(schema_path, "w", encoding="utf-8") as fh:
            json.dump(dataset.matrix.schema.to_json(), fh, indent=2)
            fh.write("\n")
