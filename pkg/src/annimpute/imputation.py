"""Helpers shared by every imputer: rounding, clamping, filling missing cells."""

from __future__ import annotations

import logging
from typing import Callable, Sequence, TypeVar

import numpy as np

from .core import AnnotationMatrix, LabelSchema

log = logging.getLogger(__name__)

H = TypeVar("H")


class NumericError(RuntimeError):
    """Training produced a non-finite loss or parameter."""


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_labels(raw, schema: LabelSchema) -> np.ndarray:
    return np.clip(round_half_away(raw), schema.min_label, schema.max_label).astype(np.int64)


def fill_missing(train: AnnotationMatrix, raw_full: np.ndarray, int_full: np.ndarray | None = None):
    """Overlay observed cells on full predictions.

    ``raw_full`` holds a prediction for every cell; observed cells are
    replaced by their true labels in both returned matrices.
    """
    raw_full = np.asarray(raw_full, dtype=float)
    if raw_full.shape != train.shape:
        raise ValueError(f"dimension mismatch: model {raw_full.shape} vs matrix {train.shape}")
    full_raw = raw_full.copy()
    full_int = to_labels(raw_full, train.schema) if int_full is None else np.asarray(int_full, dtype=np.int64).copy()
    full_raw[train.items, train.annotators] = train.labels
    full_int[train.items, train.annotators] = train.labels
    return full_int, full_raw


def select_best(
    grid: Sequence[H],
    score: Callable[[H], float],
    what: str,
) -> tuple[H, float]:
    """Lowest score wins, earliest grid entry on ties; failing combos are skipped."""
    if not grid:
        raise ValueError("empty hyperparameter grid")
    best, best_score = None, np.inf
    failures = 0
    for hyper in grid:
        try:
            # divergence is detected and reported below, not via numpy warnings
            with np.errstate(over="ignore", invalid="ignore"):
                s = score(hyper)
        except NumericError as exc:
            failures += 1
            log.warning("%s combo %s failed: %s", what, hyper, exc)
            continue
        if not np.isfinite(s):
            failures += 1
            log.warning("%s combo %s gave non-finite score", what, hyper)
            continue
        if best is None or s < best_score:
            best, best_score = hyper, s
    if best is None:
        raise NumericError(f"all {failures} {what} grid combos failed")
    return best, float(best_score)
