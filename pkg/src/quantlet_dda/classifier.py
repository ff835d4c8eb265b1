"""Scalar-on-quantile-function logistic classification.

Feature tables are plain DataFrames whose columns are grouped by prefix:

    demo_*                demographics
    rad_*                 structural radiomics
    mean_<region>         pixel mean, median_<region> pixel median
    eq_<region>_<j>       empirical quantiles (grid subsample)
    q_<region>_<k>        quantlet coefficients, k in importance order
"""
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary_labels
from .exceptions import ConfigError, SchemaError
from .l1solver import L1LogisticRegression, logistic_l1_fit

BLOCK_KINDS = ("demographics", "radiomics", "mean", "median", "eq", "quantlet")


@dataclass
class SubjectRecord:
    sample_id: str
    label: int
    demographics: np.ndarray = field(default_factory=lambda: np.empty(0))
    radiomics: np.ndarray = field(default_factory=lambda: np.empty(0))
    coefficients: dict = field(default_factory=dict)   # region -> array of K
    summaries: dict = field(default_factory=dict)      # "mean_<region>" -> float
    quantiles: dict = field(default_factory=dict)      # region -> array of G


@dataclass
class DesignMatrix:
    values: np.ndarray
    columns: list
    layout: dict
    penalty_mask: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def records_to_table(records):
    """Flatten subject records into a prefixed feature table indexed by sample id."""
    rows = []
    for r in records:
        row = {"sample_id": r.sample_id, "label": int(r.label)}
        row.update({f"demo_{j + 1}": v for j, v in enumerate(r.demographics)})
        row.update({f"rad_{j + 1}": v for j, v in enumerate(r.radiomics)})
        row.update(r.summaries)
        for region, q in r.quantiles.items():
            row.update({f"eq_{region}_{j + 1}": v for j, v in enumerate(q)})
        for region, c in r.coefficients.items():
            row.update({f"q_{region}_{k + 1}": v for k, v in enumerate(c)})
        rows.append(row)
    return pd.DataFrame(rows).set_index("sample_id")


def _numbered(table, prefix):
    pat = re.compile(rf"^{re.escape(prefix)}(\d+)$")
    cols = [(int(m.group(1)), c) for c in table.columns if (m := pat.match(c))]
    return [c for _, c in sorted(cols)]


def block_columns(table, kind, region=None, k_use=None):
    """Column names of one feature block, in block order."""
    if kind == "demographics":
        return _numbered(table, "demo_")
    if kind == "radiomics":
        return _numbered(table, "rad_")
    if kind in ("mean", "median"):
        name = f"{kind}_{region}"
        return [name] if name in table.columns else []
    if kind == "quantlet":
        cols = _numbered(table, f"q_{region}_")
        if k_use is not None:
            if k_use > len(cols):
                raise ConfigError(f"K_use={k_use} exceeds the {len(cols)} quantlets of {region}")
            cols = cols[:k_use]
        return cols
    if kind == "eq":
        cols = _numbered(table, f"eq_{region}_")
        if k_use is not None:
            if k_use > len(cols):
                raise ConfigError(f"K_use={k_use} exceeds the {len(cols)} quantiles of {region}")
            # evenly spaced subsample of the grid
            idx = np.unique(np.round(np.linspace(0, len(cols) - 1, k_use)).astype(int))
            cols = [cols[i] for i in idx]
        return cols
    raise ConfigError(f"unknown block kind {kind!r}")


FEATURE_SETS = {
    "D": ["demographics"],
    "Mean": ["demographics", "mean"],
    "Median": ["demographics", "median"],
    "EQ": ["demographics", "eq"],
    "Q": ["demographics", "quantlet"],
}


def parse_feature_set(name):
    """``"Q+R"`` -> block kinds; radiomics joins via the ``+R`` suffix."""
    parts = name.split("+")
    base = parts[0]
    if base == "R":
        blocks = ["demographics", "radiomics"]
    elif base in FEATURE_SETS:
        blocks = list(FEATURE_SETS[base])
    else:
        raise ConfigError(f"unknown feature set {name!r}")
    for extra in parts[1:]:
        if extra != "R":
            raise ConfigError(f"unknown feature set suffix {extra!r} in {name!r}")
        blocks.append("radiomics")
    return blocks


def uses_k(name):
    return name.split("+")[0] in ("Q", "EQ")


def assemble_features(table, blocks, regions=("lesion",), k_use=None, zero_fill=False,
                      penalize_demographics=True):
    """Build the design matrix and labels from a feature table.

    Columns appear as demographics, radiomics, then per-region blocks in
    the order of ``regions``. With ``zero_fill`` a region block missing
    for a record (NaN) is filled with zeros instead of raising.
    """
    if "label" not in table.columns:
        raise SchemaError("feature table has no label column")
    cols, layout = [], {}

    def add(name, names):
        if not names:
            return
        layout[name] = (len(cols), len(cols) + len(names))
        cols.extend(names)

    order = [b for b in ("demographics", "radiomics") if b in blocks]
    for b in order:
        add(b, block_columns(table, b))
    for b in blocks:
        if b in order:
            continue
        if b not in BLOCK_KINDS:
            raise ConfigError(f"unknown block {b!r}")
        for region in regions:
            names = block_columns(table, b, region, k_use)
            if not names:
                raise SchemaError(f"feature table has no {b} block for region {region!r}")
            add(f"{b}:{region}", names)
    if not cols:
        raise SchemaError("design has no columns")
    sub = table[cols]
    values = sub.to_numpy(dtype=float)
    missing = ~np.isfinite(values)
    if missing.any():
        demo_rad = np.zeros(len(cols), bool)
        for b in order:
            s, e = layout[b]
            demo_rad[s:e] = True
        if not zero_fill or missing[:, demo_rad].any():
            bad = sub.index[missing.any(axis=1)].tolist()[:5]
            raise SchemaError(f"missing feature values for records {bad}")
        values = np.where(missing, 0.0, values)
    mask = np.ones(len(cols), bool)
    if not penalize_demographics and "demographics" in layout:
        s, e = layout["demographics"]
        mask[s:e] = False
    y = table["label"].to_numpy()
    return DesignMatrix(values, cols, layout, mask), y


@dataclass
class ClassifierFit:
    fit: object
    columns: list
    layout: dict
    k_use: int = None
    threshold: float = 0.5
    basis_ref: dict = field(default_factory=dict)

    @property
    def alpha(self):
        return self.fit.intercept

    @property
    def theta(self):
        return self.fit.coef

    def block_coef(self, name):
        s, e = self.layout[name]
        return self.theta[s:e]

    def functional_coefficient(self, basis, region, kind="quantlet"):
        """Coefficient function ``beta(p) = sum_k eta_k psi_k(p)`` on the basis grid."""
        eta = self.block_coef(f"{kind}:{region}")
        return eta @ basis.psi[: eta.size]

    def to_dict(self):
        return {"alpha": float(self.alpha), "theta": [float(v) for v in self.theta],
                "columns": list(self.columns),
                "layout": {k: list(v) for k, v in self.layout.items()},
                "lambda": float(self.fit.lam), "threshold": float(self.threshold),
                "K_use": self.k_use, "basis_ref": self.basis_ref}


def fit_model(design, labels, lam, k_use=None, threshold=0.5, basis_ref=None):
    """Penalized logistic fit of a design built by :func:`assemble_features`."""
    labels = check_binary_labels(labels)
    res = logistic_l1_fit(design.values, labels, lam, design.penalty_mask)
    return ClassifierFit(res, list(design.columns), dict(design.layout), k_use, threshold,
                         basis_ref or {})


def predict(fit, X, columns=None):
    """Probabilities and classes; ``X`` rows must follow the fitted layout."""
    if columns is not None and list(columns) != list(fit.columns):
        raise SchemaError("feature columns do not match the fitted layout")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(fit.columns):
        raise SchemaError(f"expected {len(fit.columns)} features, got {X.shape[1]}")
    p = 1.0 / (1.0 + np.exp(-(fit.alpha + X @ fit.theta)))
    return p, (p >= fit.threshold).astype(int)


class ScalarOnQuantileClassifier(ClassifierMixin, BaseEstimator):
    """Select a feature set from a prefixed feature table and fit the L1 logistic model.

    Parameters
    ----------
    feature_set : str
        One of D, Mean, Median, EQ, Q, R, optionally suffixed ``+R``.
    k_use : int or None
        Leading quantlets (or grid quantiles) per region for Q / EQ sets.
    regions : tuple of str
        Regions whose blocks enter the model.
    lam : float or None
        Penalty; None selects it by cross-validation.
    """

    def __init__(self, feature_set="Q", k_use=10, regions=("lesion",), lam=None, cv=10,
                 threshold=0.5, zero_fill=False, random_state=0):
        self.feature_set = feature_set
        self.k_use = k_use
        self.regions = regions
        self.lam = lam
        self.cv = cv
        self.threshold = threshold
        self.zero_fill = zero_fill
        self.random_state = random_state

    def _design(self, X):
        table = X if "label" in X.columns else X.assign(label=0)
        k = self.k_use if uses_k(self.feature_set) else None
        return assemble_features(table, parse_feature_set(self.feature_set), self.regions, k,
                                 self.zero_fill)[0]

    def fit(self, X, y):
        design = self._design(X)
        self.model_ = L1LogisticRegression(lam=self.lam, cv=self.cv, threshold=self.threshold,
                                           penalty_mask=design.penalty_mask,
                                           random_state=self.random_state)
        self.model_.fit(design.values, y)
        self.classes_ = self.model_.classes_
        self.columns_ = design.columns
        self.layout_ = design.layout
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(self._design(X).values)

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= self.threshold).astype(int)
