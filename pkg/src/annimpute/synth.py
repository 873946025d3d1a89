"""Synthetic annotator populations with a known low-rank ground truth.

Item factors are 0/1 and annotator factors are small non-negative integers
bounded so every product sum stays inside the label span. The complete
truth ``min_label + W @ H.T`` is therefore integer valued and exactly rank
``rank``, which lets imputers be scored against a genuine oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AnnotationMatrix, Dataset, LabelSchema

_VOCAB = (
    "kind", "rude", "fair", "odd", "calm", "loud", "warm", "cold", "bold", "shy",
    "wise", "vain", "true", "fake", "safe", "wild",
)


@dataclass(frozen=True)
class SynthData:
    dataset: Dataset
    truth: np.ndarray  # complete integer ground truth, N x M
    item_factors: np.ndarray
    annotator_factors: np.ndarray


def _text_for(i: int, w: np.ndarray, rng: np.random.Generator) -> str:
    words = [f"item{i}"]
    for f, on in enumerate(w):
        # factor-bearing words give text encoders something to learn from
        words.append(_VOCAB[(2 * f + int(on)) % len(_VOCAB)])
    words.extend(rng.choice(_VOCAB, size=3).tolist())
    return " ".join(words)


def generate(
    n_items: int = 50,
    n_annotators: int = 20,
    rank: int = 2,
    observed: float = 0.4,
    noise: float = 0.0,
    schema: LabelSchema | None = None,
    seed: int = 0,
) -> SynthData:
    schema = schema or LabelSchema(0, 4)
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if not 0 < observed <= 1:
        raise ValueError("observed fraction must be in (0, 1]")
    per_factor = schema.span // rank
    if per_factor < 1:
        raise ValueError(f"rank {rank} too large for label span {schema.span}")
    rng = np.random.default_rng(seed)
    W = rng.integers(0, 2, size=(n_items, rank))
    H = rng.integers(0, per_factor + 1, size=(n_annotators, rank))
    truth = schema.min_label + W @ H.T

    noisy = truth + rng.normal(0.0, noise, size=truth.shape) if noise > 0 else truth.astype(float)
    labels = np.clip(np.sign(noisy) * np.floor(np.abs(noisy) + 0.5), schema.min_label, schema.max_label).astype(np.int64)

    # every item keeps at least one cell
    mask = rng.random(truth.shape) < observed
    forced = rng.integers(0, n_annotators, size=n_items)
    mask[np.arange(n_items), forced] = True
    ii, jj = np.nonzero(mask)
    matrix = AnnotationMatrix(n_items, n_annotators, zip(ii.tolist(), jj.tolist(), labels[ii, jj].tolist()), schema)
    texts = [_text_for(i, W[i], rng) for i in range(n_items)]
    return SynthData(Dataset(texts, matrix, "synth"), truth.astype(np.int64), W, H)
