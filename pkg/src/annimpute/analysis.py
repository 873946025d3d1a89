"""How imputation changes the data: PCA structure, variance/disagreement, soft labels."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import DEFAULT_SENTINEL, AnnotationMatrix, LabelSchema, dense_row_stats, label_stats


@dataclass(frozen=True)
class PCAProjection:
    coordinates: np.ndarray  # N x 2
    component_vectors: np.ndarray  # 2 x M
    explained_variance: np.ndarray  # 2
    sentinel: float
    degenerate: bool = False


def _as_dense(matrix, sentinel: float) -> np.ndarray:
    if isinstance(matrix, AnnotationMatrix):
        return matrix.to_dense(fill=sentinel)
    return np.asarray(matrix, dtype=float)


def pca_project(matrix, sentinel: float = DEFAULT_SENTINEL) -> PCAProjection:
    """Project annotation rows onto their top two principal axes.

    Missing cells take the value ``sentinel``. Each axis is signed so its
    largest-magnitude entry is positive.
    """
    X = _as_dense(matrix, sentinel)
    n, m = X.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 rows")
    Xc = X - X.mean(axis=0)
    if not np.any(np.abs(Xc) > 0):
        return PCAProjection(np.zeros((n, 2)), np.zeros((2, m)), np.zeros(2), sentinel, degenerate=True)
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:2]
    comps = evecs[:, order].T
    vals = np.clip(evals[order], 0.0, None)
    if comps.shape[0] < 2:
        # single annotator column: second axis does not exist
        comps = np.vstack([comps, np.zeros((2 - comps.shape[0], m))])
        vals = np.concatenate([vals, np.zeros(2 - vals.size)])
    for r in range(2):
        row = comps[r]
        if np.any(row):
            k = int(np.argmax(np.abs(row)))
            if row[k] < 0:
                comps[r] = -row
    return PCAProjection(Xc @ comps.T, comps, vals, sentinel)


@dataclass(frozen=True)
class DistributionDelta:
    per_item: list[dict]
    avg_variance_change: float
    avg_disagreement_change: float


def distribution_delta(original: AnnotationMatrix, imputed) -> DistributionDelta:
    """Per-item variance and disagreement before (present cells) and after (all cells)."""
    full = np.asarray(imputed)
    if full.shape != original.shape:
        raise ValueError(f"dimension mismatch: {original.shape} vs {full.shape}")
    schema = original.schema
    after = dense_row_stats(full, schema)
    per_item = []
    for i in range(original.n_items):
        before = label_stats(original.row(i), schema)
        per_item.append({
            "item": i,
            "variance_before": before.variance,
            "variance_after": after[i].variance,
            "disagreement_before": before.disagreement_rate,
            "disagreement_after": after[i].disagreement_rate,
        })
    dv = [r["variance_after"] - r["variance_before"] for r in per_item]
    dd = [r["disagreement_after"] - r["disagreement_before"] for r in per_item]
    return DistributionDelta(per_item, float(np.mean(dv)), float(np.mean(dd)))


def smooth(p, alpha: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return (p + alpha) / (1.0 + p.size * alpha)


def kl_divergence(p, q, alpha: float = 1e-6) -> float:
    """KL(p || q) in nats after additive smoothing of both vectors.

    With ``alpha=0`` the result may be ``inf``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    ps, qs = smooth(p, alpha), smooth(q, alpha)
    total = 0.0
    for a, b in zip(ps, qs):
        if a == 0:
            continue
        if b == 0:
            return math.inf
        total += a * math.log(a / b)
    return max(total, 0.0)


def js_divergence(p, q, alpha: float = 1e-6) -> float:
    ps, qs = smooth(p, alpha), smooth(q, alpha)
    mid = 0.5 * (ps + qs)
    return 0.5 * kl_divergence(ps, mid, 0.0) + 0.5 * kl_divergence(qs, mid, 0.0)


@dataclass
class SoftLabelRecord:
    item: int
    original: np.ndarray
    imputed_by_method: dict[str, np.ndarray]
    kl_by_method: dict[str, float]
    best_method: str | None = None

    def to_json(self) -> dict:
        return {
            "item": self.item,
            "original": [float(x) for x in self.original],
            "imputed": {k: [float(x) for x in v] for k, v in self.imputed_by_method.items()},
            "kl": {k: _json_float(v) for k, v in self.kl_by_method.items()},
            "best_method": self.best_method,
        }


def _json_float(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def softlabel_report(
    original: AnnotationMatrix,
    imputed_sets: Mapping[str, np.ndarray],
    alpha: float = 1e-6,
    direction: str = "original_imputed",
):
    """Per-item KL between original and imputed soft labels, plus mean/std per method.

    ``direction`` picks KL(original || imputed) (default) or the reverse.
    The best method per item is the lowest KL; ties keep mapping order.
    """
    if direction not in ("original_imputed", "imputed_original"):
        raise ValueError(f"unknown direction {direction!r}")
    schema = original.schema
    stats = {}
    for name, full in imputed_sets.items():
        full = np.asarray(full)
        if full.shape != original.shape:
            raise ValueError(f"dimension mismatch for {name}: {original.shape} vs {full.shape}")
        stats[name] = dense_row_stats(full, schema)
    records = []
    for i in range(original.n_items):
        orig = label_stats(original.row(i), schema).soft_label
        imp = {name: s[i].soft_label for name, s in stats.items()}
        if direction == "original_imputed":
            kl = {name: kl_divergence(orig, q, alpha) for name, q in imp.items()}
        else:
            kl = {name: kl_divergence(q, orig, alpha) for name, q in imp.items()}
        best = min(kl, key=kl.get) if kl else None
        records.append(SoftLabelRecord(i, orig, imp, kl, best))
    aggregate = {}
    for name in imputed_sets:
        vals = np.array([r.kl_by_method[name] for r in records])
        aggregate[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return records, aggregate


# -- serialization ------------------------------------------------------------

def write_ndjson(path, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_ndjson(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_pca_csv(path, proj: PCAProjection) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item", "x", "y"])
        for i, (x, y) in enumerate(proj.coordinates):
            w.writerow([i, repr(float(x)), repr(float(y))])


def delta_rows(method: str, delta: DistributionDelta) -> list[dict]:
    return [{"method": method, **r} for r in delta.per_item]


@dataclass
class AnalysisReport:
    """Everything one analysis run produces, keyed by method."""

    schema: LabelSchema
    records: list[SoftLabelRecord]
    aggregate: dict[str, dict]
    deltas: dict[str, DistributionDelta]
    pca: dict[str, PCAProjection] = field(default_factory=dict)
