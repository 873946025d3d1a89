"""End-to-end experiment steps shared by the CLI and by library users."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from statistics import median
from typing import Mapping, Sequence

import numpy as np

from . import kernel_mf, multitask, ncf
from .analysis import AnalysisReport, distribution_delta, pca_project, softlabel_report
from .core import Dataset, label_stats
from .metrics import HIGH, LOW, MEDIUM, assign_disagreement_levels, rmse, weighted_f1
from .splits import make_holdout, make_kfolds

log = logging.getLogger(__name__)

METHODS = ("kernel", "ncf", "multitask")
_LEVEL_ORDER = (LOW, MEDIUM, HIGH)


@dataclass
class ImputerSettings:
    """Grids and fixed hyperparameters for the three imputers."""

    kernel_grid: list = None
    ncf_grid: list = None
    multitask_hyper: multitask.MultitaskHyper = field(default_factory=multitask.MultitaskHyper)
    encoder: multitask.TextEncoder = field(default_factory=multitask.TextEncoder)
    seed: int = 42
    validation_fraction: float = 0.05

    def __post_init__(self):
        if self.kernel_grid is None:
            self.kernel_grid = kernel_mf.make_grid()
        if self.ncf_grid is None:
            self.ncf_grid = ncf.make_grid()

    @classmethod
    def from_config(cls, cfg: Mapping | None, seed: int = 42, full_grid: bool = False) -> "ImputerSettings":
        cfg = dict(cfg or {})
        k_axes = dict(kernel_mf.FULL_GRID_AXES if full_grid else kernel_mf.DEFAULT_GRID_AXES)
        k_axes.update({k: tuple(v) for k, v in cfg.get("kernel_grid", {}).items()})
        n_axes = dict(ncf.FULL_GRID_AXES)
        n_axes.update({k: tuple(v) for k, v in cfg.get("ncf_grid", {}).items()})
        ncf_fixed = {k: v for k, v in cfg.get("ncf", {}).items()}
        ncf_fixed.setdefault("seed", seed)
        mt = multitask.MultitaskHyper(**{"seed": seed, **cfg.get("multitask", {})})
        enc_cfg = dict(cfg.get("encoder", {}))
        if "ngram_orders" in enc_cfg:
            enc_cfg["ngram_orders"] = tuple(enc_cfg["ngram_orders"])
        return cls(
            kernel_grid=kernel_mf.make_grid(k_axes),
            ncf_grid=ncf.make_grid(n_axes, **ncf_fixed),
            multitask_hyper=mt,
            encoder=multitask.TextEncoder(**enc_cfg),
            seed=seed,
            validation_fraction=float(cfg.get("validation_fraction", 0.05)),
        )


@dataclass
class ImputeResult:
    method: str
    model: object
    hyper: object
    selection_rmse: float | None
    full_int: np.ndarray
    full_raw: np.ndarray

    def predict_cells(self, items, annotators) -> np.ndarray:
        return self.full_raw[np.asarray(items), np.asarray(annotators)]


def impute_dataset(dataset: Dataset, method: str, settings: ImputerSettings, features=None) -> ImputeResult:
    """Grid-search (where applicable), train on all of ``dataset`` and impute."""
    m = dataset.matrix
    if method == "kernel":
        best, score = kernel_mf.grid_search(m, settings.kernel_grid, settings.seed, settings.validation_fraction)
        model = kernel_mf.train(m, best)
        full_int, full_raw = kernel_mf.impute(m, model)
    elif method == "ncf":
        best, score = ncf.grid_search(m, settings.ncf_grid)
        model = ncf.train(m, best)
        full_int, full_raw = ncf.impute(m, model)
    elif method == "multitask":
        best, score = settings.multitask_hyper, None
        model = multitask.train(dataset, best, settings.encoder, features)
        full_int, full_raw = multitask.impute(dataset, model, features)
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    log.info("%s: selected %s (selection rmse %s)", method, best, score)
    return ImputeResult(method, model, best, score, full_int, full_raw)


def hyper_dict(hyper) -> dict:
    return asdict(hyper)


def holdout_rmse(dataset: Dataset, methods: Sequence[str], settings: ImputerSettings, seeds: Sequence[int], fraction: float = 0.05) -> dict:
    """Heldout RMSE per method and seed, plus the median across seeds.

    The global mean of the training cells is reported as ``mean_baseline``.
    """
    runs = []
    for seed in seeds:
        split = make_holdout(dataset.matrix, fraction, seed)
        vi, vj, vy = split.heldout_arrays()
        train_ds = Dataset(dataset.texts, split.train, dataset.name)
        runs.append({"seed": seed, "method": "mean_baseline",
                     "rmse": rmse(np.full(vy.size, split.train.labels.mean()), vy)})
        for method in methods:
            s = replace(settings, seed=seed)
            if method == "kernel":
                s.kernel_grid = [kernel_mf.with_seed(h, h.seed) for h in s.kernel_grid]
            res = impute_dataset(train_ds, method, s)
            runs.append({"seed": seed, "method": method, "rmse": rmse(res.full_raw[vi, vj], vy),
                         "hyper": hyper_dict(res.hyper)})
    table = {}
    for method in list(methods) + ["mean_baseline"]:
        table[method] = float(median([r["rmse"] for r in runs if r["method"] == method]))
    return {"runs": runs, "median": table}


def train_downstream(dataset: Dataset, method: str, settings: ImputerSettings, k: int = 5, seed: int = 0) -> dict:
    """k-fold multitask training on original vs imputed data.

    The validation fold's rows are withheld from the imputer. Individual
    predictions are scored on the validation fold's observed cells, aggregate
    predictions against each validation item's majority label.
    """
    m = dataset.matrix
    schema = m.schema
    folds = make_kfolds(m.n_items, k, seed)
    encoder = settings.encoder
    X_all = encoder.encode_many(dataset.texts)
    fold_rows, level_rows = [], []
    for f in range(k):
        tr_items = folds.items_not_in(f)
        va_items = folds.items_in(f)
        tr_ds = Dataset([dataset.texts[i] for i in tr_items], m.subset_items(tr_items), dataset.name)
        va_mat = m.subset_items(va_items)
        X_tr, X_va = X_all[tr_items], X_all[va_items]

        models = {"original": multitask.train(tr_ds, settings.multitask_hyper, encoder, X_tr)}
        imp = impute_dataset(tr_ds, method, settings, X_tr if method == "multitask" else None)
        models[f"imputed_{method}"] = multitask.train_complete(tr_ds.texts, imp.full_int, schema, settings.multitask_hyper, encoder, X_tr)

        majority = [label_stats(va_mat.row(i), schema).majority_label for i in range(va_mat.n_items)]
        rates = [label_stats(va_mat.row(i), schema).disagreement_rate for i in range(va_mat.n_items)]
        try:
            levels = assign_disagreement_levels(rates)
        except ValueError:
            levels = None
        for name, model in models.items():
            ind_pred = [multitask.predict_individual_vec(model, X_va[i], j) for i, j, _ in va_mat.triples()]
            ind_true = va_mat.labels.tolist()
            agg_pred = [multitask.predict_aggregate_vec(model, X_va[i]) for i in range(va_mat.n_items)]
            fold_rows.append({
                "fold": f,
                "training_data": name,
                "individual_f1": weighted_f1(ind_pred, ind_true),
                "aggregate_f1": weighted_f1(agg_pred, majority),
                "n_validation_items": va_mat.n_items,
            })
            if levels is None:
                continue
            for lvl in _LEVEL_ORDER:
                sel = [c for c, (i, _, _) in enumerate(va_mat.triples()) if levels.level_of_item[i] == lvl]
                if not sel:
                    continue
                level_rows.append({
                    "fold": f,
                    "training_data": name,
                    "level": lvl,
                    "n_items": sum(1 for x in levels.level_of_item if x == lvl),
                    "individual_f1": weighted_f1([ind_pred[c] for c in sel], [ind_true[c] for c in sel]),
                })
    summary = {}
    for name in sorted({r["training_data"] for r in fold_rows}):
        rows = [r for r in fold_rows if r["training_data"] == name]
        summary[name] = {
            metric: {"mean": float(np.mean([r[metric] for r in rows])), "std": float(np.std([r[metric] for r in rows]))}
            for metric in ("individual_f1", "aggregate_f1")
        }
    by_level = {}
    for r in level_rows:
        key = (r["training_data"], r["level"])
        by_level.setdefault(key, []).append(r)
    levels_summary = [
        {
            "training_data": name,
            "level": lvl,
            "n_items": sum(r["n_items"] for r in rows),
            "individual_f1_mean": float(np.mean([r["individual_f1"] for r in rows])),
            "individual_f1_std": float(np.std([r["individual_f1"] for r in rows])),
        }
        for (name, lvl), rows in sorted(by_level.items(), key=lambda kv: (kv[0][0], _LEVEL_ORDER.index(kv[0][1])))
    ]
    return {"folds": fold_rows, "levels": level_rows, "summary": summary, "levels_summary": levels_summary}


def analyze(dataset: Dataset, imputed: Mapping[str, np.ndarray], alpha: float = 1e-6, sentinel: float = 10.0, direction: str = "original_imputed") -> AnalysisReport:
    m = dataset.matrix
    records, aggregate = softlabel_report(m, imputed, alpha, direction)
    deltas = {name: distribution_delta(m, full) for name, full in imputed.items()}
    pca = {"original": pca_project(m, sentinel)}
    for name, full in imputed.items():
        pca[name] = pca_project(full, sentinel)
    return AnalysisReport(m.schema, records, aggregate, deltas, pca)
