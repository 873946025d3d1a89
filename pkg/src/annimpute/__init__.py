"""Impute missing annotations in sparse item x annotator label matrices."""

from .core import AnnotationMatrix, DataError, Dataset, LabelSchema, label_stats, load_dataset
from .imputation import NumericError
from .metrics import assign_disagreement_levels, rmse, weighted_f1
from .splits import make_holdout, make_kfolds

__version__ = "0.1.0"

__all__ = [
    "AnnotationMatrix",
    "DataError",
    "Dataset",
    "LabelSchema",
    "NumericError",
    "assign_disagreement_levels",
    "label_stats",
    "load_dataset",
    "make_holdout",
    "make_kfolds",
    "rmse",
    "weighted_f1",
]
