"""Choosing annotators and few-shot examples for individualized prompts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import AnnotationMatrix, Dataset

CONDITIONS = ("combined", "original_only", "imputed_only")
MAX_SHOTS = 30


@dataclass(frozen=True)
class Shot:
    text: str
    label: int
    item: int
    source: str  # "original" | "imputed"


@dataclass(frozen=True)
class ShotSet:
    original: list[Shot]
    imputed: list[Shot]
    held_out: Shot
    condition: str
    annotator: int
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def shots(self) -> list[Shot]:
        """Shots in prompt order: imputed block first, then original."""
        return list(self.imputed) + list(self.original)


def select_low_response_annotators(matrix: AnnotationMatrix, n: int = 30, min_annotations: int = 0) -> list[int]:
    """The ``n`` annotators with the fewest annotations (ties: smaller index).

    Annotators with fewer than ``min_annotations`` annotations are skipped.
    """
    if n > matrix.n_annotators:
        raise ValueError(f"asked for {n} annotators but the matrix has {matrix.n_annotators}")
    counts = matrix.annotator_counts()
    eligible = [j for j in range(matrix.n_annotators) if counts[j] >= min_annotations]
    return sorted(eligible, key=lambda j: (int(counts[j]), j))[:n]


def assemble_shots(
    annotator: int,
    dataset: Dataset,
    imputed: np.ndarray | None,
    condition: str,
    seed: int,
    max_shots: int = MAX_SHOTS,
) -> ShotSet:
    """Hold out one of the annotator's real annotations and pick shots around it.

    The held-out item and original shots depend only on (seed, annotator), so
    every condition targets the same example. Imputed shots come from items
    the annotator never labeled and whose texts differ from every original
    shot and from the target.
    """
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    m = dataset.matrix
    if not 0 <= annotator < m.n_annotators:
        raise IndexError(f"annotator {annotator} out of range")
    sel = m.annotators == annotator
    own_items = m.items[sel]
    own_labels = dict(zip(own_items.tolist(), m.labels[sel].tolist()))
    if not own_labels:
        raise ValueError(f"annotator {annotator} has no annotations to hold out")

    rng = np.random.default_rng([seed, annotator])
    order = [int(i) for i in rng.permutation(np.array(sorted(own_labels)))]
    target = order[0]
    target_text = dataset.texts[target]
    held_out = Shot(target_text, own_labels[target], target, "original")
    originals = [
        Shot(dataset.texts[i], own_labels[i], i, "original")
        for i in order[1:]
        if dataset.texts[i] != target_text
    ][:max_shots]

    imputed_shots: list[Shot] = []
    if condition != "original_only":
        if imputed is None:
            raise ValueError(f"condition {condition!r} needs an imputed matrix")
        imputed = np.asarray(imputed)
        if imputed.shape != m.shape:
            raise ValueError(f"imputed matrix shape {imputed.shape} != {m.shape}")
        used = {target_text} | {s.text for s in originals}
        candidates = [i for i in range(m.n_items) if i not in own_labels]
        for i in rng.permutation(np.array(candidates, dtype=np.int64)) if candidates else []:
            i = int(i)
            if len(imputed_shots) >= max_shots:
                break
            if dataset.texts[i] in used:
                continue
            used.add(dataset.texts[i])
            imputed_shots.append(Shot(dataset.texts[i], int(imputed[i, annotator]), i, "imputed"))

    if condition == "imputed_only":
        originals = []
    return ShotSet(originals, imputed_shots if condition != "original_only" else [], held_out, condition, annotator)
