"""Leave-one-out evaluation at a single cross-validated penalty, and metrics."""
import warnings
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from ._validation import check_binary_labels, check_design
from .exceptions import ConfigError, SchemaError
from .l1solver import SeparationWarning, cv_select_lambda, logistic_l1_fit, logistic_lambda_max

F1_MODES = ("precision_recall", "sens_spec")


@dataclass
class ConfusionCounts:
    TP: int
    FP: int
    TN: int
    FN: int

    @property
    def n(self):
        return self.TP + self.FP + self.TN + self.FN


@dataclass
class MetricsRow:
    sensitivity: float
    specificity: float
    f1: float
    accuracy: float
    counts: ConfusionCounts
    features: str = ""
    K: int = None

    def as_csv_row(self):
        def fmt(v):
            return "NA" if v is None else f"{v:.6f}"
        k = "" if self.K is None else str(self.K)
        return [self.features, k, fmt(self.sensitivity), fmt(self.specificity),
                fmt(self.f1), fmt(self.accuracy)]


def _ratio(a, b):
    return a / b if b else 0.0


def confusion_metrics(y_true, y_pred, f1_mode="precision_recall", features="", K=None):
    """Sensitivity, specificity, F1 and accuracy.

    Sensitivity (specificity) is None when the truth has no positives
    (negatives). F1 is the precision-recall harmonic mean by default;
    ``f1_mode="sens_spec"`` gives the harmonic mean of sensitivity and
    specificity. Zero denominators inside F1 give 0.
    """
    if f1_mode not in F1_MODES:
        raise ConfigError(f"f1_mode must be one of {F1_MODES}")
    t = np.asarray(y_true).ravel()
    p = np.asarray(y_pred).ravel()
    if t.shape != p.shape:
        raise SchemaError("truth and prediction lengths differ")
    if not (np.isin(t, (0, 1)).all() and np.isin(p, (0, 1)).all()):
        raise SchemaError("labels must be binary 0/1")
    c = ConfusionCounts(int(np.sum((t == 1) & (p == 1))), int(np.sum((t == 0) & (p == 1))),
                        int(np.sum((t == 0) & (p == 0))), int(np.sum((t == 1) & (p == 0))))
    sens = c.TP / (c.TP + c.FN) if c.TP + c.FN else None
    spec = c.TN / (c.TN + c.FP) if c.TN + c.FP else None
    if f1_mode == "precision_recall":
        prec = _ratio(c.TP, c.TP + c.FP)
        rec = sens or 0.0
    else:
        prec, rec = spec or 0.0, sens or 0.0
    f1 = _ratio(2 * prec * rec, prec + rec)
    acc = (c.TP + c.TN) / c.n if c.n else 0.0
    return MetricsRow(sens, spec, f1, acc, c, features, K)


@dataclass
class LoocvResult:
    prob: np.ndarray
    y_pred: np.ndarray
    metrics: MetricsRow
    lam: float


def _fit_predict(X, y, i, lam, mask):
    train = np.ones(len(y), bool)
    train[i] = False
    yt = y[train]
    if np.unique(yt).size < 2:
        # single-class training set: smoothed base rate
        return (yt.sum() + 0.5) / (yt.size + 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SeparationWarning)
        fit = logistic_l1_fit(X[train], yt, lam, mask)
    eta = fit.decision_function(X[i:i + 1])[0]
    return 1.0 / (1.0 + np.exp(-eta))


def select_lambda(X, y, penalty_mask=None, folds=10, seed=0, scoring="deviance"):
    """CV penalty on the full cohort; falls back to ``lambda_max`` for tiny minorities."""
    n_min = int(min(y.sum(), (1 - y).sum()))
    k = min(folds, n_min)
    if k < 2:
        warnings.warn("minority class too small for cross-validation; using lambda_max",
                      UserWarning, stacklevel=2)
        return logistic_lambda_max(X, y, penalty_mask)
    return cv_select_lambda(X, y, k, seed, penalty_mask, scoring=scoring).lam


def loocv_evaluate(X, y, penalty_mask=None, folds=10, seed=0, threshold=0.5, lam=None,
                   f1_mode="precision_recall", scoring="deviance", n_jobs=1, features="", K=None):
    """Select the penalty once on the full data, then predict each sample held out.

    Fits are independent, so ``n_jobs > 1`` runs them on a thread pool;
    results do not depend on ``n_jobs``.
    """
    X, y = check_design(X, y)
    y = check_binary_labels(y)
    if X.shape[0] < 3:
        raise ConfigError("LOOCV needs at least 3 samples")
    if lam is None:
        lam = select_lambda(X, y, penalty_mask, folds, seed, scoring)
    jobs = (delayed(_fit_predict)(X, y, i, lam, penalty_mask) for i in range(len(y)))
    prob = np.array(Parallel(n_jobs=n_jobs, prefer="threads")(jobs), dtype=float)
    y_pred = (prob >= threshold).astype(int)
    metrics = confusion_metrics(y.astype(int), y_pred, f1_mode, features, K)
    return LoocvResult(prob, y_pred, metrics, float(lam))


def _fit_predict_rebuilt(build, y, i, lam):
    train = np.ones(len(y), bool)
    train[i] = False
    X, mask = build(train)
    return _fit_predict(np.asarray(X, dtype=float), y, i, lam, mask)


def loocv_evaluate_refit(build, y, lam, threshold=0.5, f1_mode="precision_recall", n_jobs=1,
                         features="", K=None):
    """LOOCV whose design is rebuilt without the held-out sample.

    ``build(train)`` takes a boolean training mask and returns ``(X,
    penalty_mask)`` for all rows, e.g. quantlet coefficients from a basis
    learned on the training rows only. ``lam`` is fixed beforehand, as in
    :func:`loocv_evaluate`.
    """
    y = check_binary_labels(y)
    if y.size < 3:
        raise ConfigError("LOOCV needs at least 3 samples")
    jobs = (delayed(_fit_predict_rebuilt)(build, y, i, lam) for i in range(len(y)))
    prob = np.array(Parallel(n_jobs=n_jobs, prefer="threads")(jobs), dtype=float)
    y_pred = (prob >= threshold).astype(int)
    metrics = confusion_metrics(y.astype(int), y_pred, f1_mode, features, K)
    return LoocvResult(prob, y_pred, metrics, float(lam))
