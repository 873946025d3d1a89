"""Neural collaborative filtering imputer (MLP tower over concatenated embeddings).

Forward pass for a cell (i, j)::

    x  = [p_i, q_j]                      # length 2f
    h1 = relu(x W1 + b1)                 # f
    h2 = relu(h1 W2 + b2)                # f/2
    y  = lo + (hi - lo) * sigmoid(h2 W3 + b3)

Trained with Adam on mean squared error over mini-batches of observed cells.
Everything is float64 numpy with hand-written backprop.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import AnnotationMatrix, LabelSchema
from .imputation import NumericError, fill_missing, select_best
from .metrics import rmse

FORMAT = "annimpute.ncf"
FORMAT_VERSION = 1
PARAM_NAMES = ("item_emb", "ann_emb", "W1", "b1", "W2", "b2", "W3", "b3")

FULL_GRID_AXES = {
    "factors": (4, 8, 16, 32, 64, 128),
    "learning_rate": (0.001, 0.0005, 0.0001, 0.00005),
}


@dataclass(frozen=True)
class NCFHyper:
    factors: int = 8
    learning_rate: float = 0.001
    epochs: int = 100
    seed: int = 42
    batch_size: int = 256
    init_std: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.factors < 2 or self.factors % 2:
            raise ValueError(f"factors must be an even number >= 2, got {self.factors}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def make_grid(axes: dict | None = None, **fixed) -> list[NCFHyper]:
    axes = FULL_GRID_AXES if axes is None else axes
    return [
        NCFHyper(factors=f, learning_rate=lr, **fixed)
        for f in axes["factors"]
        for lr in axes["learning_rate"]
    ]


@dataclass
class NCFModel:
    params: dict[str, np.ndarray]
    hyper: NCFHyper
    schema: LabelSchema
    loss_history: list[float] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.params["item_emb"].shape[0], self.params["ann_emb"].shape[0]

    @property
    def item_embeddings(self) -> np.ndarray:
        return self.params["item_emb"]

    @property
    def annotator_embeddings(self) -> np.ndarray:
        return self.params["ann_emb"]

    def to_json(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "hyper": asdict(self.hyper),
            "schema": self.schema.to_json(),
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NCFModel":
        if obj.get("format") != FORMAT or obj.get("version") != FORMAT_VERSION:
            raise ValueError("not an ncf model file (or unsupported version)")
        params = {k: np.asarray(obj["params"][k], dtype=float) for k in PARAM_NAMES}
        return cls(params, NCFHyper(**obj["hyper"]), LabelSchema.from_json(obj["schema"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "NCFModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def init_params(n_items: int, n_annotators: int, hyper: NCFHyper) -> dict[str, np.ndarray]:
    """Every tensor drawn from N(0, init_std) with the hyper's seed."""
    rng = np.random.default_rng(hyper.seed)
    f, s = hyper.factors, hyper.init_std
    shapes = {
        "item_emb": (n_items, f),
        "ann_emb": (n_annotators, f),
        "W1": (2 * f, f),
        "b1": (f,),
        "W2": (f, f // 2),
        "b2": (f // 2,),
        "W3": (f // 2, 1),
        "b3": (1,),
    }
    return {name: rng.normal(0.0, s, shape) for name, shape in shapes.items()}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward(params, items, annotators, schema: LabelSchema):
    x = np.concatenate([params["item_emb"][items], params["ann_emb"][annotators]], axis=1)
    z1 = x @ params["W1"] + params["b1"]
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params["W2"] + params["b2"]
    h2 = np.maximum(z2, 0.0)
    z3 = (h2 @ params["W3"] + params["b3"])[:, 0]
    s = _sigmoid(z3)
    y = schema.min_label + schema.span * s
    return y, (x, z1, h1, z2, h2, s)


def loss_and_grads(params, items, annotators, targets, schema: LabelSchema):
    """Mean squared error over the batch and its gradient for every parameter."""
    items = np.asarray(items)
    annotators = np.asarray(annotators)
    y, (x, z1, h1, z2, h2, s) = forward(params, items, annotators, schema)
    err = y - np.asarray(targets, dtype=float)
    n = err.size
    loss = float(np.mean(err * err))
    dz3 = (2.0 / n) * err * schema.span * s * (1.0 - s)
    dz3 = dz3[:, None]
    g = {"W3": h2.T @ dz3, "b3": dz3.sum(0)}
    dz2 = (dz3 @ params["W3"].T) * (z2 > 0)
    g["W2"] = h1.T @ dz2
    g["b2"] = dz2.sum(0)
    dz1 = (dz2 @ params["W2"].T) * (z1 > 0)
    g["W1"] = x.T @ dz1
    g["b1"] = dz1.sum(0)
    dx = dz1 @ params["W1"].T
    f = params["item_emb"].shape[1]
    g["item_emb"] = np.zeros_like(params["item_emb"])
    g["ann_emb"] = np.zeros_like(params["ann_emb"])
    np.add.at(g["item_emb"], items, dx[:, :f])
    np.add.at(g["ann_emb"], annotators, dx[:, f:])
    return loss, g


def train(train: AnnotationMatrix, hyper: NCFHyper) -> NCFModel:
    if train.n_cells == 0:
        raise ValueError("cannot train on an empty matrix")
    schema = train.schema
    params = init_params(train.n_items, train.n_annotators, hyper)
    rng = np.random.default_rng([hyper.seed, 1])
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(p) for k, p in params.items()}
    b1, b2, lr, eps = hyper.beta1, hyper.beta2, hyper.learning_rate, hyper.eps
    items, anns, labels = train.items, train.annotators, train.labels.astype(float)
    step = 0
    history = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(train.n_cells)
        total = 0.0
        for start in range(0, order.size, hyper.batch_size):
            batch = order[start:start + hyper.batch_size]
            loss, grads = loss_and_grads(params, items[batch], anns[batch], labels[batch], schema)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch} with {hyper}")
            total += loss * batch.size
            step += 1
            c1 = 1.0 - b1 ** step
            c2 = 1.0 - b2 ** step
            for k, gk in grads.items():
                m[k] = b1 * m[k] + (1.0 - b1) * gk
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk
                params[k] -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)
        history.append(total / train.n_cells)
    if not all(np.all(np.isfinite(p)) for p in params.values()):
        raise NumericError(f"non-finite parameters after training with {hyper}")
    return NCFModel(params, hyper, schema, history)


def predict(model: NCFModel, item: int, annotator: int) -> float:
    n, m = model.shape
    if not (0 <= item < n and 0 <= annotator < m):
        raise IndexError(f"cell ({item}, {annotator}) outside {n}x{m}")
    y, _ = forward(model.params, np.array([item]), np.array([annotator]), model.schema)
    return float(y[0])


def predict_cells(model: NCFModel, items, annotators) -> np.ndarray:
    items = np.asarray(items, dtype=np.int64)
    annotators = np.asarray(annotators, dtype=np.int64)
    n, m = model.shape
    if items.size and (items.min() < 0 or items.max() >= n or annotators.min() < 0 or annotators.max() >= m):
        raise IndexError("cell index out of range")
    return forward(model.params, items, annotators, model.schema)[0]


def predict_all(model: NCFModel) -> np.ndarray:
    n, m = model.shape
    ii, jj = np.divmod(np.arange(n * m), m)
    return predict_cells(model, ii, jj).reshape(n, m)


def grid_search(train_matrix: AnnotationMatrix, grid):
    """Select by RMSE on the training cells themselves."""

    def score(hyper):
        model = train(train_matrix, hyper)
        return rmse(predict_cells(model, train_matrix.items, train_matrix.annotators), train_matrix.labels)

    return select_best(list(grid), score, "ncf")


def impute(train_matrix: AnnotationMatrix, model: NCFModel):
    if model.shape != train_matrix.shape:
        raise ValueError(f"dimension mismatch: model {model.shape} vs matrix {train_matrix.shape}")
    return fill_missing(train_matrix, predict_all(model))


def with_seed(hyper: NCFHyper, seed: int) -> NCFHyper:
    return replace(hyper, seed=seed)
