"""Seeded holdout and k-fold splitting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import AnnotationMatrix, DataError


@dataclass(frozen=True)
class HoldoutSplit:
    train: AnnotationMatrix
    heldout_cells: list[tuple[int, int, int]]
    seed: int

    def heldout_arrays(self):
        arr = np.asarray(self.heldout_cells, dtype=np.int64).reshape(-1, 3)
        return arr[:, 0], arr[:, 1], arr[:, 2]


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of_item: list[int]

    def items_in(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.fold_of_item) if f == fold]

    def items_not_in(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.fold_of_item) if f != fold]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_holdout(matrix: AnnotationMatrix, fraction: float, seed: int) -> HoldoutSplit:
    """Withhold ``fraction`` of the cells, spreading them over items and annotators.

    Cells are visited in a seeded random order. A cell is taken only while
    its item and annotator are under their caps (initially the even share
    of the target) and its row keeps at least one annotation; caps grow by
    one per pass until the target is met.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    total = matrix.n_cells
    target = _round_half_up(fraction * total)
    row_left = matrix.row_counts().copy()
    removable = int(np.sum(row_left[row_left > 0] - 1))
    if target > removable:
        raise DataError(
            f"infeasible holdout: {target} cells requested but only {removable} can be removed without emptying a row"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(total)
    items, annotators = matrix.items, matrix.annotators
    n_distinct_items = len(np.unique(items))
    n_distinct_ann = len(np.unique(annotators))
    item_cap = math.ceil(target / n_distinct_items) if target else 0
    ann_cap = math.ceil(target / n_distinct_ann) if target else 0

    taken = np.zeros(total, dtype=bool)
    item_used = np.zeros(matrix.n_items, dtype=np.int64)
    ann_used = np.zeros(matrix.n_annotators, dtype=np.int64)
    n_taken = 0
    while n_taken < target:
        progressed = False
        for c in order:
            if n_taken >= target:
                break
            if taken[c]:
                continue
            i, j = items[c], annotators[c]
            if item_used[i] >= item_cap or ann_used[j] >= ann_cap or row_left[i] <= 1:
                continue
            taken[c] = True
            item_used[i] += 1
            ann_used[j] += 1
            row_left[i] -= 1
            n_taken += 1
            progressed = True
        if n_taken < target:
            if not progressed and item_cap >= matrix.n_annotators and ann_cap >= matrix.n_items:
                raise DataError("infeasible holdout: no further cells can be withheld")
            item_cap += 1
            ann_cap += 1

    idx = np.flatnonzero(taken)
    heldout = [(int(items[c]), int(annotators[c]), int(matrix.labels[c])) for c in idx]
    train = matrix.without((i, j) for i, j, _ in heldout)
    return HoldoutSplit(train, heldout, seed)


def make_kfolds(n_items: int, k: int, seed: int) -> FoldAssignment:
    if k < 1 or k > n_items:
        raise ValueError(f"need 1 <= k <= n_items, got k={k}, n_items={n_items}")
    perm = np.random.default_rng(seed).permutation(n_items)
    fold_of_item = [0] * n_items
    for pos, item in enumerate(perm):
        fold_of_item[int(item)] = pos % k
    return FoldAssignment(k, fold_of_item)


def write_holdout_ndjson(path, split: HoldoutSplit) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, lab in split.heldout_cells:
            fh.write(json.dumps({"item": i, "annotator": j, "label": lab}) + "\n")


def write_folds_ndjson(path, folds: FoldAssignment) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, f in enumerate(folds.fold_of_item):
            fh.write(json.dumps({"item": i, "fold": f}) + "\n")
