"""L1-penalized least squares and logistic regression by coordinate descent.

All fits standardize the columns internally (population standard
deviation) and report coefficients on the original scale. The intercept
is never penalized; ``penalty_mask`` leaves selected columns unpenalized
as well. The penalty ``lam`` applies on the standardized scale, so the
objectives are

    lasso:     (1/2n) ||y - a - X b||^2      + lam * sum_j |b_j|
    logistic:  (1/n) sum_i nll(y_i, a + x_i b) + lam * sum_j |b_j|
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary_labels, check_design
from .exceptions import ConfigError, ConvergenceError, DegenerateLabelsError, SchemaError

COEF_CAP = 30.0
_BIG = 1e300


class SeparationWarning(UserWarning):
    pass


@dataclass
class Standardization:
    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray

    @classmethod
    def from_design(cls, X):
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        constant = scale <= 1e-12 * np.maximum(1.0, np.abs(mean))
        scale = np.where(constant, 1.0, scale)
        return cls(mean, scale, constant)

    def apply(self, X):
        Z = (X - self.mean) / self.scale
        Z[:, self.constant] = 0.0
        return Z

    def to_original(self, intercept, coef_std):
        coef = coef_std / self.scale
        return intercept - coef @ self.mean, coef


@dataclass
class FitResult:
    """Outcome of a single penalized fit.

    ``coef`` and ``intercept`` are on the original column scale,
    ``coef_std`` and ``intercept_std`` on the standardized one.
    """

    intercept: float
    coef: np.ndarray
    lam: float
    converged: bool
    n_iter: int
    objective: float
    coef_std: np.ndarray = field(repr=False)
    intercept_std: float = 0.0
    standardization: Standardization = field(default=None, repr=False)
    penalty_mask: np.ndarray = field(default=None, repr=False)

    def decision_function(self, X):
        return self.intercept + np.asarray(X, dtype=float) @ self.coef

    def decision_function_std(self, X):
        Z = self.standardization.apply(np.asarray(X, dtype=float))
        return self.intercept_std + Z @ self.coef_std


# ---------------------------------------------------------------- kernels

@njit(cache=True, nogil=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True, nogil=True)
def _lasso_sweep(Z, r, beta, lam, col_sq, active_only):
    n, d = Z.shape
    max_change = 0.0
    for j in range(d):
        if col_sq[j] == 0.0:
            continue
        old = beta[j]
        if active_only and old == 0.0:
            continue
        g = 0.0
        for i in range(n):
            g += Z[i, j] * r[i]
        g = g / n + col_sq[j] * old
        new = _soft(g, lam[j]) / col_sq[j]
        delta = new - old
        if delta != 0.0:
            for i in range(n):
                r[i] -= Z[i, j] * delta
            beta[j] = new
            ad = abs(delta)
            if ad > max_change:
                max_change = ad
    return max_change


@njit(cache=True, nogil=True)
def _lasso_obj(r, beta, lam):
    s = 0.0
    for i in range(r.shape[0]):
        s += r[i] * r[i]
    return 0.5 * s / r.shape[0] + _penalty(beta, lam)


@njit(cache=True, nogil=True)
def _active_newton(Z, yc, r, beta, lam):
    # Active-set QP steps with signs held fixed: move toward the sign-fixed
    # minimizer, stopping at the first coefficient that would cross zero.
    n = Z.shape[0]
    for _ in range(Z.shape[1]):
        act = np.flatnonzero(beta)
        k = act.size
        if k == 0 or k >= n:
            return
        ZA = np.empty((n, k))
        for c in range(k):
            ZA[:, c] = Z[:, act[c]]
        H = ZA.T @ ZA / n
        g = ZA.T @ yc / n
        for c in range(k):
            g[c] -= lam[act[c]] * np.sign(beta[act[c]])
        sol = np.linalg.solve(H, g)
        t = 1.0
        hit = -1
        for c in range(k):
            if not np.isfinite(sol[c]):
                return
            b = beta[act[c]]
            if sol[c] * b <= 0.0:
                tc = b / (b - sol[c])
                if tc < t:
                    t = tc
                    hit = c
        trial = beta.copy()
        for c in range(k):
            trial[act[c]] = beta[act[c]] + t * (sol[c] - beta[act[c]])
        if hit >= 0:
            trial[act[hit]] = 0.0
        new_r = yc - Z @ trial
        if _lasso_obj(new_r, trial, lam) > _lasso_obj(r, beta, lam):
            return
        beta[:] = trial
        r[:] = new_r
        if hit < 0:
            return


@njit(cache=True, nogil=True)
def _lasso_cd(Z, yc, beta, lam, max_sweeps, tol):
    n, d = Z.shape
    col_sq = np.zeros(d)
    for j in range(d):
        s = 0.0
        for i in range(n):
            s += Z[i, j] * Z[i, j]
        col_sq[j] = s / n
    r = yc - Z @ beta
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        if _lasso_sweep(Z, r, beta, lam, col_sq, False) <= tol:
            return sweeps, True
        # settle the active set before the next full pass
        settled = False
        for _ in range(10):
            if sweeps >= max_sweeps:
                break
            sweeps += 1
            if _lasso_sweep(Z, r, beta, lam, col_sq, True) <= tol:
                settled = True
                break
        if not settled:
            _active_newton(Z, yc, r, beta, lam)
    return sweeps, False


@njit(cache=True, nogil=True)
def _nll(eta, y):
    s = 0.0
    for i in range(eta.shape[0]):
        e = eta[i]
        if e > 0:
            s += e + np.log1p(np.exp(-e)) - y[i] * e
        else:
            s += np.log1p(np.exp(e)) - y[i] * e
    return s / eta.shape[0]


@njit(cache=True, nogil=True)
def _penalty(beta, lam):
    s = 0.0
    for j in range(beta.shape[0]):
        if lam[j] < 1e299:
            s += lam[j] * abs(beta[j])
    return s


@njit(cache=True, nogil=True)
def _logistic_pn(Z, y, b0, beta, lam, cap, max_outer, max_inner, tol, inner_tol):
    """Proximal Newton with inner coordinate descent and backtracking."""
    n, d = Z.shape
    eta = b0 + Z @ beta
    obj = _nll(eta, y) + _penalty(beta, lam)
    w = np.empty(n)
    zr = np.empty(n)
    for outer in range(1, max_outer + 1):
        for i in range(n):
            p = 1.0 / (1.0 + np.exp(-eta[i]))
            wi = p * (1.0 - p)
            if wi < 1e-5:
                wi = 1e-5
            w[i] = wi
            zr[i] = (y[i] - p) / wi  # working residual against current eta
        xwx = np.zeros(d)
        for j in range(d):
            s = 0.0
            for i in range(n):
                s += w[i] * Z[i, j] * Z[i, j]
            xwx[j] = s / n
        wsum = w.sum()
        nb0 = b0
        nbeta = beta.copy()
        for _ in range(max_inner):
            mc = 0.0
            s = 0.0
            for i in range(n):
                s += w[i] * zr[i]
            d0 = s / wsum
            if d0 != 0.0:
                nb0 += d0
                for i in range(n):
                    zr[i] -= d0
                mc = abs(d0)
            for j in range(d):
                if xwx[j] == 0.0:
                    continue
                old = nbeta[j]
                g = 0.0
                for i in range(n):
                    g += w[i] * Z[i, j] * zr[i]
                g = g / n + xwx[j] * old
                new = _soft(g, lam[j]) / xwx[j]
                if new > cap:
                    new = cap
                elif new < -cap:
                    new = -cap
                delta = new - old
                if delta != 0.0:
                    for i in range(n):
                        zr[i] -= Z[i, j] * delta
                    nbeta[j] = new
                    if abs(delta) > mc:
                        mc = abs(delta)
            if mc <= inner_tol:
                break
        db0 = nb0 - b0
        dbeta = nbeta - beta
        step_size = 0.0
        for j in range(d):
            if abs(dbeta[j]) > step_size:
                step_size = abs(dbeta[j])
        if abs(db0) > step_size:
            step_size = abs(db0)
        if step_size <= tol:
            return b0, outer, True, obj
        t = 1.0
        accepted = False
        while t > 1e-12:
            cb0 = b0 + t * db0
            cbeta = beta + t * dbeta
            ceta = cb0 + Z @ cbeta
            cobj = _nll(ceta, y) + _penalty(cbeta, lam)
            if cobj <= obj + 1e-15 * max(1.0, abs(obj)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return b0, outer, True, obj
        b0 = cb0
        beta[:] = cbeta
        eta = ceta
        obj = cobj
        if t * step_size <= tol:
            return b0, outer, True, obj
    return b0, max_outer, False, obj


# ---------------------------------------------------------------- helpers

def _penalty_vector(d, lam, penalty_mask):
    if lam < 0 or not np.isfinite(lam):
        raise ConfigError(f"penalty must be finite and non-negative, got {lam}")
    mask = np.ones(d, dtype=bool) if penalty_mask is None else np.asarray(penalty_mask, dtype=bool)
    if mask.shape != (d,):
        raise SchemaError(f"penalty mask has length {mask.size}, design has {d} columns")
    return np.where(mask, float(lam), 0.0), mask


def lasso_objective(X, y, intercept, coef, lam, penalty_mask=None):
    """Objective on the original scale of a standardized-penalty Lasso fit."""
    X, y = check_design(X, y)
    std = Standardization.from_design(X)
    lam_vec, _ = _penalty_vector(X.shape[1], lam, penalty_mask)
    r = y - intercept - X @ coef
    return 0.5 * np.mean(r ** 2) + float(np.sum(lam_vec * np.abs(coef * std.scale)))


def lasso_lambda_max(X, y, penalty_mask=None):
    X, y = check_design(X, y)
    std = Standardization.from_design(X)
    Z = std.apply(X)
    mask = np.ones(X.shape[1], bool) if penalty_mask is None else np.asarray(penalty_mask, bool)
    if not mask.any():
        return 0.0
    r = y - y.mean()
    if (~mask).any():
        Zu = Z[:, ~mask]
        r = r - Zu @ np.linalg.lstsq(Zu, r, rcond=None)[0]
    return float(np.max(np.abs(Z[:, mask].T @ r)) / X.shape[0])


def lasso_fit(X, y, lam, penalty_mask=None, tol=1e-7, max_iter=100_000, coef_init=None):
    """Lasso by cyclic coordinate descent with active-set passes.

    Converges when a full pass changes no standardized coefficient by more
    than ``tol``. Raises :class:`ConvergenceError` after ``max_iter`` passes.
    """
    X, y = check_design(X, y)
    n, d = X.shape
    if n < 1:
        raise SchemaError("empty design")
    lam_vec, mask = _penalty_vector(d, lam, penalty_mask)
    std = Standardization.from_design(X)
    Z = np.ascontiguousarray(std.apply(X))
    ybar = y.mean()
    beta = np.zeros(d) if coef_init is None else np.asarray(coef_init, float) * std.scale
    beta[std.constant] = 0.0
    sweeps, ok = _lasso_cd(Z, y - ybar, beta, lam_vec, int(max_iter), float(tol))
    intercept, coef = std.to_original(ybar, beta)
    r = y - ybar - Z @ beta
    obj = 0.5 * np.mean(r ** 2) + float(np.sum(lam_vec * np.abs(beta)))
    res = FitResult(intercept, coef, float(lam), bool(ok), int(sweeps), obj, beta.copy(),
                    ybar, std, mask)
    if not ok:
        raise ConvergenceError(f"lasso did not converge in {max_iter} passes",
                               last_iterate=res, diagnostics={"lam": lam})
    return res


def lasso_path(X, y, lambdas, penalty_mask=None, tol=1e-7, max_iter=100_000):
    """Warm-started fits along ``lambdas`` (in the given order)."""
    X, y = check_design(X, y)
    fits = []
    coef = None
    for lam in lambdas:
        fit = lasso_fit(X, y, lam, penalty_mask, tol, max_iter, coef_init=coef)
        coef = fit.coef
        fits.append(fit)
    return fits


def logistic_objective(X, y, intercept, coef, lam, penalty_mask=None):
    X, y = check_design(X, y)
    std = Standardization.from_design(X)
    lam_vec, _ = _penalty_vector(X.shape[1], lam, penalty_mask)
    eta = intercept + X @ coef
    return float(_nll(eta, y)) + float(np.sum(lam_vec * np.abs(coef * std.scale)))


def logistic_lambda_max(X, y, penalty_mask=None):
    """Smallest penalty at which every penalized coefficient is zero."""
    X, y = check_design(X, y)
    y = check_binary_labels(y)
    mask = np.ones(X.shape[1], bool) if penalty_mask is None else np.asarray(penalty_mask, bool)
    if not mask.any():
        return 0.0
    std = Standardization.from_design(X)
    Z = np.ascontiguousarray(std.apply(X))
    lam_vec = np.where(mask, _BIG, 0.0)
    beta = np.zeros(X.shape[1])
    b0 = float(np.log(y.mean() / (1 - y.mean())))
    b0, *_ = _logistic_pn(Z, y, b0, beta, lam_vec, COEF_CAP, 1000, 10_000, 1e-10, 1e-12)
    p = 1.0 / (1.0 + np.exp(-(b0 + Z @ beta)))
    return float(np.max(np.abs(Z[:, mask].T @ (y - p))) / X.shape[0])


def _logistic_fit_std(Z, y, lam_vec, b0, beta, tol, max_iter):
    return _logistic_pn(Z, y, float(b0), beta, lam_vec, COEF_CAP, int(max_iter), 10_000,
                        float(tol), float(tol) * 1e-2)


def logistic_l1_fit(X, y, lam, penalty_mask=None, tol=1e-9, max_iter=10_000, coef_init=None,
                    intercept_init=None):
    """L1-penalized logistic regression with an unpenalized intercept.

    Standardized coefficients are boxed to ``|b| <= 30``; hitting the box
    signals (quasi-)separation and emits a :class:`SeparationWarning`.
    """
    X, y = check_design(X, y)
    y = check_binary_labels(y)
    n, d = X.shape
    lam_vec, mask = _penalty_vector(d, lam, penalty_mask)
    std = Standardization.from_design(X)
    Z = np.ascontiguousarray(std.apply(X))
    beta = np.zeros(d) if coef_init is None else np.asarray(coef_init, float) * std.scale
    beta[std.constant] = 0.0
    if intercept_init is None:
        b0 = np.log(y.mean() / (1 - y.mean()))
    else:
        b0 = intercept_init + (beta / std.scale) @ std.mean
    b0, it, ok, obj = _logistic_fit_std(Z, y, lam_vec, b0, beta, tol, max_iter)
    if np.any(np.abs(beta) >= COEF_CAP):
        warnings.warn("coefficients reached the separation cap; data may be separable",
                      SeparationWarning, stacklevel=2)
    intercept, coef = std.to_original(b0, beta)
    res = FitResult(intercept, coef, float(lam), bool(ok), int(it), float(obj), beta.copy(),
                    float(b0), std, mask)
    if not ok:
        raise ConvergenceError(f"logistic fit did not converge in {max_iter} iterations",
                               last_iterate=res, diagnostics={"lam": lam})
    return res


def logistic_kkt_violation(X, y, fit):
    """Largest violation of the optimality conditions, on the standardized scale.

    Uses a fresh gradient computation from ``X`` and the original-scale
    coefficients. Capped coefficients are excluded.
    """
    X, y = check_design(X, y)
    std = Standardization.from_design(X)
    Z = std.apply(X)
    eta = fit.intercept + X @ fit.coef
    p = 1.0 / (1.0 + np.exp(-eta))
    grad = Z.T @ (p - y) / X.shape[0]
    beta = fit.coef * std.scale
    lam_vec = np.where(fit.penalty_mask, fit.lam, 0.0)
    viol = [abs(np.mean(p - y))]
    for j in range(X.shape[1]):
        if std.constant[j] or abs(beta[j]) >= COEF_CAP * (1 - 1e-12):
            continue
        if beta[j] == 0.0:
            viol.append(max(0.0, abs(grad[j]) - lam_vec[j]))
        else:
            viol.append(abs(grad[j] + lam_vec[j] * np.sign(beta[j])))
    return float(max(viol))


# ---------------------------------------------------------------- CV

def lambda_grid(lam_max, n_lambda=100, min_ratio=1e-3):
    if lam_max <= 0:
        return np.zeros(1)
    return lam_max * np.logspace(0, np.log10(min_ratio), n_lambda)


def stratified_folds(y, folds, seed):
    """Fold index per row, balanced within each class."""
    rng = np.random.default_rng(seed)
    out = np.empty(len(y), dtype=np.int64)
    offset = 0
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        out[idx] = (np.arange(idx.size) + offset) % folds
        offset += idx.size
    return out


def _binomial_deviance(y, eta):
    return 2.0 * _nll(np.asarray(eta, float), np.asarray(y, float))


@dataclass
class CVResult:
    lam: float
    lambdas: np.ndarray
    mean_score: np.ndarray
    se_score: np.ndarray
    fold_ids: np.ndarray
    scoring: str
    seed_used: int


def cv_select_lambda(X, y, folds=10, seed=0, penalty_mask=None, n_lambda=100, min_ratio=1e-3,
                     scoring="deviance", tol=1e-9, max_refold=10):
    """Choose the logistic penalty by stratified K-fold cross-validation.

    The path runs from the full-data ``lambda_max`` down to
    ``min_ratio * lambda_max``. Fits within each fold are warm-started
    along the path. Returns the penalty minimizing the mean validation
    ``scoring`` ("deviance" or "misclassification").
    """
    X, y = check_design(X, y)
    y = check_binary_labels(y)
    n = X.shape[0]
    if folds < 2 or n < folds:
        raise ConfigError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    if scoring not in ("deviance", "misclassification"):
        raise ConfigError(f"unknown scoring {scoring!r}")
    lambdas = lambda_grid(logistic_lambda_max(X, y, penalty_mask), n_lambda, min_ratio)

    for attempt in range(max_refold):
        fold_seed = seed + attempt
        fold_ids = stratified_folds(y, folds, fold_seed)
        if all(np.unique(y[fold_ids != k]).size == 2 for k in range(folds)):
            break
    else:
        raise DegenerateLabelsError(
            f"could not build {folds} folds with both classes in every training set")

    scores = np.empty((folds, lambdas.size))
    sizes = np.empty(folds)
    for k in range(folds):
        tr, te = fold_ids != k, fold_ids == k
        sizes[k] = te.sum()
        coef, b0 = None, None
        for l, lam in enumerate(lambdas):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SeparationWarning)
                fit = logistic_l1_fit(X[tr], y[tr], lam, penalty_mask, tol=tol,
                                      coef_init=coef, intercept_init=b0)
            coef, b0 = fit.coef, fit.intercept
            eta = fit.decision_function(X[te])
            if scoring == "deviance":
                scores[k, l] = _binomial_deviance(y[te], eta)
            else:
                scores[k, l] = np.mean((eta >= 0) != (y[te] == 1))
    wts = sizes / sizes.sum()
    mean = wts @ scores
    se = np.sqrt(wts @ (scores - mean) ** 2 / max(folds - 1, 1))
    best = int(np.argmin(mean))
    return CVResult(float(lambdas[best]), lambdas, mean, se, fold_ids, scoring, fold_seed)


# ---------------------------------------------------------------- estimators

class LassoCD(RegressorMixin, BaseEstimator):
    """Lasso with standardized-scale penalty ``lam`` and unpenalized intercept."""

    def __init__(self, lam=1.0, penalty_mask=None, tol=1e-7, max_iter=100_000):
        self.lam = lam
        self.penalty_mask = penalty_mask
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        self.fit_result_ = lasso_fit(X, y, self.lam, self.penalty_mask, self.tol, self.max_iter)
        self.coef_ = self.fit_result_.coef
        self.intercept_ = self.fit_result_.intercept
        self.n_features_in_ = self.coef_.size
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self.fit_result_.decision_function(check_design(X))


class L1LogisticRegression(ClassifierMixin, BaseEstimator):
    """Penalized logistic regression; ``lam=None`` selects the penalty by CV.

    Parameters
    ----------
    lam : float or None
        Penalty on the standardized scale.
    cv : int
        Folds used when ``lam`` is None.
    penalty_mask : array of bool or None
        False marks columns left unpenalized.
    threshold : float
        Probability cut-off for ``predict``.
    random_state : int
        Seed for the fold assignment.
    """

    def __init__(self, lam=None, cv=10, n_lambda=100, lambda_min_ratio=1e-3, scoring="deviance",
                 penalty_mask=None, threshold=0.5, tol=1e-9, random_state=0):
        self.lam = lam
        self.cv = cv
        self.n_lambda = n_lambda
        self.lambda_min_ratio = lambda_min_ratio
        self.scoring = scoring
        self.penalty_mask = penalty_mask
        self.threshold = threshold
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_design(X, y)
        y = check_binary_labels(y)
        self.classes_ = np.array([0, 1])
        if self.lam is None:
            self.cv_results_ = cv_select_lambda(
                X, y, self.cv, self.random_state, self.penalty_mask, self.n_lambda,
                self.lambda_min_ratio, self.scoring, self.tol)
            self.lambda_ = self.cv_results_.lam
        else:
            self.lambda_ = float(self.lam)
        self.fit_result_ = logistic_l1_fit(X, y, self.lambda_, self.penalty_mask, tol=self.tol)
        self.coef_ = self.fit_result_.coef
        self.intercept_ = self.fit_result_.intercept
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_design(X)
        if X.shape[1] != self.n_features_in_:
            raise SchemaError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.fit_result_.decision_function(X)

    def predict_proba(self, X):
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X)))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= self.threshold).astype(int)
