"""Kernel matrix factorization imputer trained by per-cell SGD.

Prediction for item i and annotator j is ``a + c * K(w_i, h_j)``. For the
bounded kernels (rbf, sigmoid) ``a`` and ``c`` are pinned to the label range;
for the linear kernel they are trained.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .core import AnnotationMatrix, LabelSchema
from .imputation import NumericError, fill_missing, select_best
from .metrics import rmse
from .splits import make_holdout

KERNELS = ("linear", "rbf", "sigmoid")
FORMAT = "annimpute.kernel_mf"
FORMAT_VERSION = 1

FULL_GRID_AXES = {
    "factors": (1, 2, 4, 8, 16, 32),
    "epochs": (1, 2, 4, 8, 16, 32, 64, 128, 256),
    "kernel": KERNELS,
    "regularization": (0.1, 0.01, 0.001),
    "learning_rate": (0.01, 0.001, 0.0001),
    "seed": (42, 85),
}

# Desk-scale subset of the full grid; the full product has 2916 combos.
DEFAULT_GRID_AXES = {
    "factors": (2, 4, 8),
    "epochs": (64, 256),
    "kernel": KERNELS,
    "regularization": (0.01,),
    "learning_rate": (0.01,),
    "seed": (42,),
}


@dataclass(frozen=True)
class KernelMFHyper:
    factors: int = 8
    epochs: int = 128
    kernel: str = "linear"
    gamma: str | float = "auto"
    regularization: float = 0.01
    learning_rate: float = 0.01
    init_mean: float = 0.0
    init_std: float = 0.1
    seed: int = 42

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.factors < 1 or self.epochs < 0:
            raise ValueError("factors must be >= 1 and epochs >= 0")

    @property
    def gamma_value(self) -> float:
        return 1.0 / self.factors if self.gamma == "auto" else float(self.gamma)


def make_grid(axes: dict | None = None, **fixed) -> list[KernelMFHyper]:
    axes = dict(DEFAULT_GRID_AXES if axes is None else axes)
    keys = list(axes)
    return [KernelMFHyper(**dict(zip(keys, combo)), **fixed) for combo in itertools.product(*axes.values())]


@dataclass
class KernelMFModel:
    item_factors: np.ndarray
    annotator_factors: np.ndarray
    bias: float
    scale: float
    hyper: KernelMFHyper
    schema: LabelSchema
    loss_history: list[float] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.item_factors.shape[0], self.annotator_factors.shape[0]

    def to_json(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "hyper": asdict(self.hyper),
            "schema": self.schema.to_json(),
            "bias": self.bias,
            "scale": self.scale,
            "item_factors": self.item_factors.tolist(),
            "annotator_factors": self.annotator_factors.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KernelMFModel":
        if obj.get("format") != FORMAT or obj.get("version") != FORMAT_VERSION:
            raise ValueError("not a kernel_mf model file (or unsupported version)")
        return cls(
            np.asarray(obj["item_factors"], dtype=float),
            np.asarray(obj["annotator_factors"], dtype=float),
            float(obj["bias"]),
            float(obj["scale"]),
            KernelMFHyper(**obj["hyper"]),
            LabelSchema.from_json(obj["schema"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "KernelMFModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def kernel_value(kernel: str, w: np.ndarray, h: np.ndarray, gamma: float) -> float:
    if kernel == "linear":
        return float(w @ h)
    if kernel == "rbf":
        d = w - h
        return float(np.exp(-gamma * (d @ d)))
    return float(1.0 / (1.0 + np.exp(-gamma * (w @ h))))


def kernel_grad(kernel: str, w: np.ndarray, h: np.ndarray, gamma: float, k: float):
    """Partial derivatives of K with respect to w and h."""
    if kernel == "linear":
        return h, w
    if kernel == "rbf":
        g = -2.0 * gamma * k * (w - h)
        return g, -g
    s = gamma * k * (1.0 - k)
    return s * h, s * w


def cell_loss_grad(kernel, w, h, a, c, y, reg, gamma):
    """Per-cell objective ``(y_hat - y)^2 + reg*(|w|^2 + |h|^2)`` and its gradient.

    Returns (loss, dw, dh, da, dc).
    """
    k = kernel_value(kernel, w, h, gamma)
    err = a + c * k - y
    kw, kh = kernel_grad(kernel, w, h, gamma, k)
    loss = err * err + reg * (w @ w + h @ h)
    dw = 2.0 * err * c * kw + 2.0 * reg * w
    dh = 2.0 * err * c * kh + 2.0 * reg * h
    return loss, dw, dh, 2.0 * err, 2.0 * err * k


def _anchors(hyper: KernelMFHyper, schema: LabelSchema, labels: np.ndarray) -> tuple[float, float]:
    if hyper.kernel == "linear":
        return float(labels.mean()), 1.0
    return float(schema.min_label), float(schema.span)


def train(train: AnnotationMatrix, hyper: KernelMFHyper) -> KernelMFModel:
    if train.n_cells == 0:
        raise ValueError("cannot train on an empty matrix")
    rng = np.random.default_rng(hyper.seed)
    W = rng.normal(hyper.init_mean, hyper.init_std, size=(train.n_items, hyper.factors))
    H = rng.normal(hyper.init_mean, hyper.init_std, size=(train.n_annotators, hyper.factors))
    labels = train.labels.astype(float)
    a, c = _anchors(hyper, train.schema, labels)
    trainable_affine = hyper.kernel == "linear"
    gamma = hyper.gamma_value
    lr, reg, kern = hyper.learning_rate, hyper.regularization, hyper.kernel
    items, anns = train.items, train.annotators
    history = []
    for epoch in range(hyper.epochs):
        total = 0.0
        for idx in rng.permutation(train.n_cells):
            i, j = items[idx], anns[idx]
            w, h = W[i], H[j]
            loss, dw, dh, da, dc = cell_loss_grad(kern, w, h, a, c, labels[idx], reg, gamma)
            total += loss
            W[i] = w - lr * dw
            H[j] = h - lr * dh
            if trainable_affine:
                a -= lr * da
                c -= lr * dc
        if not np.isfinite(total) or not (np.all(np.isfinite(W)) and np.all(np.isfinite(H))):
            raise NumericError(f"non-finite loss at epoch {epoch} with {hyper}")
        history.append(float(total))
    return KernelMFModel(W, H, float(a), float(c), hyper, train.schema, history)


def objective(model: KernelMFModel, matrix: AnnotationMatrix) -> float:
    """Summed per-cell objective over the observed cells of ``matrix``."""
    gamma = model.hyper.gamma_value
    total = 0.0
    for i, j, y in matrix.triples():
        total += cell_loss_grad(model.hyper.kernel, model.item_factors[i], model.annotator_factors[j],
                                model.bias, model.scale, y, model.hyper.regularization, gamma)[0]
    return total


def predict(model: KernelMFModel, item: int, annotator: int) -> float:
    n, m = model.shape
    if not (0 <= item < n and 0 <= annotator < m):
        raise IndexError(f"cell ({item}, {annotator}) outside {n}x{m}")
    k = kernel_value(model.hyper.kernel, model.item_factors[item], model.annotator_factors[annotator], model.hyper.gamma_value)
    return model.bias + model.scale * k


def predict_all(model: KernelMFModel) -> np.ndarray:
    W, H = model.item_factors, model.annotator_factors
    g = model.hyper.gamma_value
    if model.hyper.kernel == "linear":
        K = W @ H.T
    elif model.hyper.kernel == "rbf":
        sq = (W * W).sum(1)[:, None] + (H * H).sum(1)[None, :] - 2.0 * W @ H.T
        K = np.exp(-g * np.maximum(sq, 0.0))
    else:
        K = 1.0 / (1.0 + np.exp(-g * (W @ H.T)))
    return model.bias + model.scale * K


def predict_cells(model: KernelMFModel, items, annotators) -> np.ndarray:
    return np.array([predict(model, int(i), int(j)) for i, j in zip(items, annotators)])


def grid_search(train_matrix: AnnotationMatrix, grid, seed: int, fraction: float = 0.05):
    """Select the combo with the lowest RMSE on a seeded validation holdout."""
    split = make_holdout(train_matrix, fraction, seed)
    vi, vj, vy = split.heldout_arrays()

    def score(hyper):
        model = train(split.train, hyper)
        return rmse(predict_cells(model, vi, vj), vy)

    return select_best(list(grid), score, "kernel_mf")


def impute(train_matrix: AnnotationMatrix, model: KernelMFModel):
    if model.shape != train_matrix.shape:
        raise ValueError(f"dimension mismatch: model {model.shape} vs matrix {train_matrix.shape}")
    return fill_missing(train_matrix, predict_all(model))


def with_seed(hyper: KernelMFHyper, seed: int) -> KernelMFHyper:
    return replace(hyper, seed=seed)
