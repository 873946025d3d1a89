"""Per-annotator multitask classifier over a frozen hashed-text encoder.

Each annotator j owns a linear head ``logits = W_j x + b_j`` over the shared
text vector ``x``. Training minimises softmax cross-entropy summed over the
annotations present for each item; absent annotations contribute nothing.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import AnnotationMatrix, Dataset, LabelSchema
from .imputation import NumericError, fill_missing

FORMAT = "annimpute.multitask"
FORMAT_VERSION = 1
_TOKEN = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class TextEncoder:
    """Signed feature hashing of unigrams and bigrams, L2-normalised."""

    kind: str = "feature_hash"
    dim: int = 256
    ngram_orders: tuple[int, ...] = (1, 2)
    seed: int = 0

    def __post_init__(self):
        if self.kind != "feature_hash":
            raise ValueError(f"unsupported encoder kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        object.__setattr__(self, "ngram_orders", tuple(sorted(set(self.ngram_orders))))

    def _key(self) -> bytes:
        return self.seed.to_bytes(8, "little", signed=True)

    def grams(self, text: str) -> list[str]:
        toks = _TOKEN.findall(text.lower())
        out = []
        for n in self.ngram_orders:
            out.extend(" ".join(toks[k:k + n]) for k in range(len(toks) - n + 1))
        return out

    def encode(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        key = self._key()
        for g in self.grams(text):
            digest = hashlib.blake2b(g.encode("utf-8"), digest_size=8, key=key).digest()
            idx = int.from_bytes(digest[:4], "little") % self.dim
            vec[idx] += 1.0 if digest[4] & 1 else -1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def encode_many(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self.encode(t) for t in texts]) if texts else np.zeros((0, self.dim))


def encode(encoder: TextEncoder, text: str) -> np.ndarray:
    return encoder.encode(text)


@dataclass(frozen=True)
class MultitaskHyper:
    epochs: int = 10
    learning_rate: float = 0.1
    seed: int = 0
    max_labels: int = 64


@dataclass
class MultitaskModel:
    encoder: TextEncoder
    weights: np.ndarray  # M x K x d
    biases: np.ndarray  # M x K
    hyper: MultitaskHyper
    schema: LabelSchema

    @property
    def n_annotators(self) -> int:
        return self.weights.shape[0]

    def logits(self, x: np.ndarray) -> np.ndarray:
        """All heads' logits for one text vector, shape M x K."""
        return self.weights @ x + self.biases

    def to_json(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "encoder": asdict(self.encoder),
            "hyper": asdict(self.hyper),
            "schema": self.schema.to_json(),
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MultitaskModel":
        if obj.get("format") != FORMAT or obj.get("version") != FORMAT_VERSION:
            raise ValueError("not a multitask model file (or unsupported version)")
        enc = dict(obj["encoder"])
        enc["ngram_orders"] = tuple(enc["ngram_orders"])
        return cls(
            TextEncoder(**enc),
            np.asarray(obj["weights"], dtype=float),
            np.asarray(obj["biases"], dtype=float),
            MultitaskHyper(**obj["hyper"]),
            LabelSchema.from_json(obj["schema"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "MultitaskModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def masked_loss_grad(weights, biases, x, targets, mask):
    """Masked cross-entropy for one item and its gradient.

    ``targets`` holds label indices (0..K-1) per annotator; entries where
    ``mask`` is 0 are ignored. Returns (loss, dW, db) with dW shaped like
    ``weights``.
    """
    present = np.flatnonzero(mask)
    dW = np.zeros_like(weights)
    db = np.zeros_like(biases)
    if present.size == 0:
        return 0.0, dW, db
    z = weights[present] @ x + biases[present]
    p = _softmax(z)
    t = np.asarray(targets)[present]
    rows = np.arange(present.size)
    loss = float(-np.sum(np.log(p[rows, t])))
    p[rows, t] -= 1.0
    dW[present] = p[:, :, None] * x[None, None, :]
    db[present] = p
    return loss, dW, db


def _features(dataset: Dataset, encoder: TextEncoder, features) -> np.ndarray:
    if features is not None:
        X = np.asarray(features, dtype=float)
        if X.shape[0] != dataset.matrix.n_items:
            raise ValueError(f"features have {X.shape[0]} rows for {dataset.matrix.n_items} items")
        return X
    return encoder.encode_many(dataset.texts)


def train_on(
    X: np.ndarray,
    labels: np.ndarray,
    mask: np.ndarray,
    schema: LabelSchema,
    hyper: MultitaskHyper = MultitaskHyper(),
    encoder: TextEncoder = TextEncoder(),
) -> MultitaskModel:
    """Train on a feature matrix X (N x d) and a dense label grid with a presence mask."""
    K = schema.n_labels
    if K > hyper.max_labels:
        raise ValueError(f"{K} labels exceeds max_labels={hyper.max_labels}")
    n_items, n_ann = mask.shape
    d = X.shape[1]
    W = np.zeros((n_ann, K, d))
    b = np.zeros((n_ann, K))
    targets = np.where(mask, labels - schema.min_label, 0).astype(np.int64)
    rng = np.random.default_rng(hyper.seed)
    lr = hyper.learning_rate
    for epoch in range(hyper.epochs):
        for i in rng.permutation(n_items):
            loss, dW, db = masked_loss_grad(W, b, X[i], targets[i], mask[i])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, item {i}")
            W -= lr * dW
            b -= lr * db
    return MultitaskModel(encoder, W, b, hyper, schema)


def train(dataset: Dataset, hyper: MultitaskHyper = MultitaskHyper(), encoder: TextEncoder = TextEncoder(), features=None) -> MultitaskModel:
    m = dataset.matrix
    X = _features(dataset, encoder, features)
    labels = np.zeros(m.shape, dtype=np.int64)
    labels[m.items, m.annotators] = m.labels
    return train_on(X, labels, m.mask(), m.schema, hyper, encoder)


def train_complete(texts: Sequence[str], full: np.ndarray, schema: LabelSchema, hyper: MultitaskHyper = MultitaskHyper(), encoder: TextEncoder = TextEncoder(), features=None) -> MultitaskModel:
    """Train on a fully observed (e.g. imputed) label matrix."""
    full = np.asarray(full, dtype=np.int64)
    X = np.asarray(features, dtype=float) if features is not None else encoder.encode_many(list(texts))
    return train_on(X, full, np.ones(full.shape, dtype=bool), schema, hyper, encoder)


def _argmax_labels(logits: np.ndarray, schema: LabelSchema) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the smallest label
    return np.argmax(logits, axis=-1) + schema.min_label


def _vote(labels: np.ndarray, schema: LabelSchema) -> int:
    counts = np.bincount(np.asarray(labels) - schema.min_label, minlength=schema.n_labels)
    return int(np.argmax(counts)) + schema.min_label


def predict_individual_vec(model: MultitaskModel, x: np.ndarray, annotator: int) -> int:
    if not 0 <= annotator < model.n_annotators:
        raise IndexError(f"annotator {annotator} out of range")
    z = model.weights[annotator] @ x + model.biases[annotator]
    return int(_argmax_labels(z, model.schema))


def predict_individual(model: MultitaskModel, text: str, annotator: int) -> int:
    return predict_individual_vec(model, model.encoder.encode(text), annotator)


def predict_aggregate_vec(model: MultitaskModel, x: np.ndarray) -> int:
    return _vote(_argmax_labels(model.logits(x), model.schema), model.schema)


def predict_aggregate(model: MultitaskModel, text: str) -> int:
    return predict_aggregate_vec(model, model.encoder.encode(text))


def predict_full(model: MultitaskModel, X: np.ndarray):
    """Expected label and argmax label for every (item, annotator), both N x M."""
    Z = np.einsum("mkd,nd->nmk", model.weights, X) + model.biases[None]
    P = _softmax(Z)
    values = np.arange(model.schema.min_label, model.schema.max_label + 1, dtype=float)
    return P @ values, _argmax_labels(Z, model.schema)


def impute(dataset: Dataset, model: MultitaskModel, features=None):
    m: AnnotationMatrix = dataset.matrix
    if model.n_annotators != m.n_annotators:
        raise ValueError(f"dimension mismatch: model has {model.n_annotators} heads, matrix {m.n_annotators} annotators")
    X = _features(dataset, model.encoder, features)
    raw, hard = predict_full(model, X)
    return fill_missing(m, raw, hard)


def load_embeddings(path, n_items: int) -> np.ndarray:
    """Precomputed item vectors from ``.npy`` or NDJSON ``{"item": i, "vector": [...]}``."""
    if str(path).endswith(".npy"):
        X = np.load(path)
    else:
        rows = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    rows[int(rec["item"])] = rec["vector"]
        if sorted(rows) != list(range(n_items)):
            raise ValueError(f"{path}: embeddings must cover items 0..{n_items - 1} exactly once")
        X = np.asarray([rows[i] for i in range(n_items)], dtype=float)
    if X.shape[0] != n_items:
        raise ValueError(f"{path}: {X.shape[0]} vectors for {n_items} items")
    return X
