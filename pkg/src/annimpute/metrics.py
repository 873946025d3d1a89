"""Evaluation metrics and disagreement-level assignment."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import LabelSchema

LOW, MEDIUM, HIGH = "Low", "Medium", "High"


def rmse(predictions: Sequence[float], truths: Sequence[float]) -> float:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("rmse of empty input")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def weighted_f1(predictions: Sequence[int], truths: Sequence[int], schema: LabelSchema | None = None) -> float:
    """Support-weighted mean of per-class F1 over the classes present in ``truths``."""
    if len(predictions) != len(truths):
        raise ValueError(f"length mismatch: {len(predictions)} vs {len(truths)}")
    if len(truths) == 0:
        raise ValueError("weighted_f1 of empty input")
    if schema is not None:
        bad = [x for x in list(predictions) + list(truths) if not schema.contains(x)]
        if bad:
            raise ValueError(f"label {bad[0]} outside schema")
    support = Counter(truths)
    predicted = Counter(predictions)
    hits = Counter(t for p, t in zip(predictions, truths) if p == t)
    # exact rational sum, rounded once, so the result is independent of class order
    total = Fraction(0)
    for cls, n_true in support.items():
        total += Fraction(2 * hits[cls] * n_true, n_true + predicted[cls])
    return float(total / len(truths))


@dataclass(frozen=True)
class DisagreementLevels:
    low_threshold: float
    high_threshold: float
    level_of_item: list[str]

    def counts(self) -> dict[str, int]:
        c = Counter(self.level_of_item)
        return {lvl: c.get(lvl, 0) for lvl in (LOW, MEDIUM, HIGH)}


def _level(rate: float, low: float, high: float) -> str:
    if rate <= low:
        return LOW
    if rate >= high:
        return HIGH
    return MEDIUM


def assign_disagreement_levels(rates: Sequence[float]) -> DisagreementLevels:
    """Pick (low, high) thresholds among observed rates minimizing category-size variance.

    Items at or below ``low`` are Low, at or above ``high`` are High. Ties in
    variance go to the smaller low threshold, then the smaller high one.
    """
    rates = [float(r) for r in rates]
    values = sorted(set(rates))
    if len(values) < 3:
        raise ValueError(f"need at least 3 distinct disagreement rates, got {len(values)}")
    counts = Counter(rates)
    # cumulative count of items with rate <= values[a]
    cum = np.cumsum([counts[v] for v in values])
    n = len(rates)
    best = None
    for a in range(len(values)):
        n_low = int(cum[a])
        for b in range(a + 2, len(values)):
            n_high = n - int(cum[b - 1])
            n_mid = n - n_low - n_high
            # total is fixed, so the sum of squares orders the variance exactly
            ss = n_low * n_low + n_mid * n_mid + n_high * n_high
            if best is None or ss < best[0]:
                best = (ss, a, b)
    _, a, b = best
    low, high = values[a], values[b]
    return DisagreementLevels(low, high, [_level(r, low, high) for r in rates])
