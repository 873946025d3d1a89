"""Response parsing and per-condition scoring."""

from __future__ import annotations

import re
from typing import Mapping, Sequence

from ..core import LabelSchema
from ..metrics import weighted_f1

_WS = re.compile(r"\s+")


def parse_response(raw: str, schema: LabelSchema) -> int | None:
    """The label ``raw`` names once all whitespace is removed, else None."""
    text = _WS.sub("", raw)
    for label in schema.labels:
        if text == str(schema.display_value(label)):
            return label
    return None


def _f1_with_invalid(pairs: Sequence[tuple[int | None, int]], schema: LabelSchema) -> float:
    invalid = schema.min_label - 1  # never a truth label, so always wrong
    preds = [invalid if p is None else p for p, _ in pairs]
    truths = [t for _, t in pairs]
    return weighted_f1(preds, truths)


def score_table(results: Mapping[tuple[str, str, str], Sequence[tuple[int | None, int]]], schema: LabelSchema) -> dict:
    """Weighted F1 for every (condition, skeleton, version)."""
    return {key: _f1_with_invalid(pairs, schema) for key, pairs in results.items()}


def score_conditions(results: Mapping[tuple[str, str, str], Sequence[tuple[int | None, int]]], schema: LabelSchema) -> dict[str, dict]:
    """Best weighted F1 per condition and the skeleton/version that reached it.

    Invalid parses count as a wrong prediction. Ties go to the smaller
    skeleton id, then the smaller version string.
    """
    table = score_table(results, schema)
    out: dict[str, dict] = {}
    for (cond, skel, ver) in sorted(table):
        if not results[(cond, skel, ver)]:
            raise ValueError(f"no results for {cond}/{skel}/{ver}")
        f1 = table[(cond, skel, ver)]
        if cond not in out or f1 > out[cond]["best_f1"]:
            out[cond] = {"best_f1": f1, "best_skeleton": skel, "best_version": ver}
    return out
