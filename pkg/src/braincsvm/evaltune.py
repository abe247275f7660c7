"""Confusion-matrix metrics, k-fold splitting and (C, g) grid search."""
from dataclasses import dataclass, field

import numpy as np

from . import csvm
from .errors import InvalidArgumentError

DEFAULT_C_VALUES = (1, 3, 5, 7, 9, 11, 13, 15)
DEFAULT_G_VALUES = (0.5, 1, 2, 3, 4)
DEFAULT_FOLDS = 10


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be non-negative")

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_labels(cls, y_true, y_pred, positive=1):
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        if y_true.shape != y_pred.shape:
            raise InvalidArgumentError("label arrays differ in shape")
        t = y_true == positive
        p = y_pred == positive
        return cls(tp=int(np.sum(t & p)), tn=int(np.sum(~t & ~p)),
                   fp=int(np.sum(~t & p)), fn=int(np.sum(t & ~p)))

    def as_dict(self):
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def as_dict(self):
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def metrics(cm):
    """Accuracy, precision, recall and F1.

    Precision (recall) is 0 when there are no predicted (actual) positives,
    and F1 is 0 when precision + recall is 0.
    """
    if cm.total < 1:
        raise InvalidArgumentError("confusion matrix is empty")
    accuracy = (cm.tp + cm.tn) / cm.total
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else 0.0
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(accuracy, precision, recall, f1)


def kfold_split(n, k, seed=0, labels=None):
    """Partition ``range(n)`` into ``k`` shuffled folds of near-equal size.

    With ``labels``, each class is shuffled and dealt round-robin across the
    folds (continuing where the previous class stopped), so every fold gets
    its share of each class and overall sizes still differ by at most one.
    """
    if k < 2:
        raise InvalidArgumentError(f"k must be >= 2, got {k}")
    if n < k:
        raise InvalidArgumentError(f"cannot split {n} samples into {k} folds")
    rng = np.random.default_rng(seed)
    if labels is None:
        order = rng.permutation(n)
    else:
        labels = np.asarray(labels)
        if labels.shape[0] != n:
            raise InvalidArgumentError("labels length must equal n")
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    folds = [[] for _ in range(k)]
    for pos, idx in enumerate(order):
        folds[pos % k].append(int(idx))
    return [np.sort(np.array(f, dtype=np.intp)) for f in folds]


@dataclass(frozen=True)
class GridSpec:
    C_values: tuple = DEFAULT_C_VALUES
    g_values: tuple = DEFAULT_G_VALUES
    folds: int = DEFAULT_FOLDS

    def __post_init__(self):
        if not self.C_values or not self.g_values:
            raise InvalidArgumentError("grid value lists must be non-empty")
        if self.folds < 2:
            raise InvalidArgumentError("folds must be >= 2")
        if any(c <= 0 for c in self.C_values) or any(g <= 0 for g in self.g_values):
            raise InvalidArgumentError("grid values must be positive")


@dataclass(frozen=True)
class CellScore:
    C: float
    g: float
    mean_recall: float
    mean_accuracy: float


@dataclass
class GridResult:
    best: CellScore
    cells: list = field(default_factory=list)

    def csv_rows(self):
        return [(c.C, c.g, c.mean_recall, c.mean_accuracy) for c in self.cells]


def cross_validate(X, y, C, g, cost_ratio, folds, tol=csvm.DEFAULT_TOL):
    """Mean held-out (recall, accuracy) of the cost-sensitive SVM over ``folds``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    recalls, accs = [], []
    everything = np.arange(len(y))
    for fold in folds:
        train = np.setdiff1d(everything, fold)
        model = csvm.train_svm(X[train], y[train], csvm.KernelSpec(g), csvm.CostSpec(C, cost_ratio), tol=tol)
        m = metrics(ConfusionMatrix.from_labels(y[fold], csvm.predict(model, X[fold])))
        recalls.append(m.recall)
        accs.append(m.accuracy)
    return float(np.mean(recalls)), float(np.mean(accs))


def _rank_key(cell):
    return (-cell.mean_recall, -cell.mean_accuracy, cell.C, cell.g)


def grid_search(X, y, grid=GridSpec(), cost_ratio=csvm.DEFAULT_COST_RATIO, seed=0):
    """Pick (C, g) by stratified k-fold CV.

    Highest mean recall wins; ties go to higher mean accuracy, then smaller
    C, then smaller g.  Every cell sees the same folds.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    folds = kfold_split(len(y), grid.folds, seed, labels=y)
    for f in folds:
        if np.unique(y[np.setdiff1d(np.arange(len(y)), f)]).size < 2 or np.unique(y[f]).size < 2:
            raise InvalidArgumentError("a fold lacks one of the classes; use fewer folds or more data")
    cells = []
    for C in grid.C_values:
        for g in grid.g_values:
            recall, acc = cross_validate(X, y, C, g, cost_ratio, folds)
            cells.append(CellScore(float(C), float(g), recall, acc))
    best = min(cells, key=_rank_key)
    return GridResult(best=best, cells=cells)
