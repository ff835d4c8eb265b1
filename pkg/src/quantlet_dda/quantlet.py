"""Learning a reduced orthonormal quantlet basis and projecting onto it."""
import warnings
from dataclasses import dataclass, field

import numpy as np
import pywt
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_quantile_matrix
from .dictionary import build_dictionary
from .exceptions import ConfigError, ConvergenceError, SchemaError
from .l1solver import Standardization, _lasso_cd, lambda_grid
from .quantile import EmpiricalQuantileTransformer, ProbabilityGrid


class ThresholdNotReachedWarning(UserWarning):
    pass


class RankDeficiencyWarning(UserWarning):
    pass


# ---------------------------------------------------------------- concordance

def concordance(q, q_hat, grid):
    """Lin's concordance between two functions, moments by grid quadrature.

    Broadcasts over leading axes.
    """
    w = grid.weights / grid.weights.sum()
    q = np.asarray(q, dtype=float)
    q_hat = np.asarray(q_hat, dtype=float)
    mq, mh = q @ w, q_hat @ w
    dq = q - mq[..., None] if q.ndim > 1 else q - mq
    dh = q_hat - mh[..., None] if q_hat.ndim > 1 else q_hat - mh
    vq = (dq * dq) @ w
    vh = (dh * dh) @ w
    cov = (dq * dh) @ w
    denom = vq + vh + (mq - mh) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(denom > 0, 2 * cov / np.where(denom > 0, denom, 1.0), 1.0)
    return rho if rho.ndim else float(rho)


def _weighted_lstsq_fit(D, Q, grid):
    """Quadrature-weighted least-squares reconstruction of rows of Q on rows of D."""
    if D.shape[0] == 0:
        return np.zeros_like(Q)
    sw = np.sqrt(grid.weights)
    coef = np.linalg.lstsq((D * sw).T, (Q * sw).T, rcond=None)[0]
    return (D.T @ coef).T


# ---------------------------------------------------------------- selection

@dataclass
class SelectionResult:
    sets: list
    union: np.ndarray
    frequency: np.ndarray
    lambdas: np.ndarray = field(default=None, repr=False)
    r2: np.ndarray = field(default=None, repr=False)
    refit: list = field(default=None, repr=False)

    @classmethod
    def from_sets(cls, sets, n_elements, **kw):
        sets = [np.array(sorted(set(map(int, s))), dtype=np.int64) for s in sets]
        freq = np.zeros(n_elements, dtype=np.int64)
        for s in sets:
            freq[s] += 1
        union = np.flatnonzero(freq)
        return cls(sets, union, freq, **kw)


def _r2(y, fitted):
    tss = np.sum((y - y.mean()) ** 2)
    if tss == 0:
        return 1.0
    return 1.0 - np.sum((y - fitted) ** 2) / tss


def select_union_basis(Q, dictionary, r2_target=0.999, n_lambda=50, lambda_min_ratio=1e-4,
                       tol=1e-7, max_iter=100_000):
    """Per-sample Lasso selection over the dictionary, then the union.

    Each sample's quantile function is regressed on the dictionary
    elements (squared loss over grid points, unpenalized intercept) along
    a warm-started path of ``n_lambda`` penalties. The first (largest)
    penalty whose fit reaches ``R^2 >= r2_target`` fixes the sample's
    support; the smallest penalty is used if none does. The intercept
    plays the role of the constant element, which joins the support
    whenever the intercept is nonzero.
    """
    Q = check_quantile_matrix(Q, dictionary.grid)
    if Q.shape[0] < 2:
        raise SchemaError("selection needs at least two samples")
    Dt = dictionary.values.T
    std = Standardization.from_design(Dt)
    Z = np.ascontiguousarray(std.apply(Dt))
    n, d = Z.shape
    sets, lams, r2s, refits = [], [], [], []
    for i, q in enumerate(Q):
        qc = q - q.mean()
        lam_max = float(np.max(np.abs(Z.T @ qc)) / n)
        path = lambda_grid(lam_max, n_lambda, lambda_min_ratio)
        beta = np.zeros(d)
        chosen = None
        for lam in path:
            _, ok = _lasso_cd(Z, qc, beta, np.full(d, lam), max_iter, tol)
            if not ok:
                raise ConvergenceError(f"selection lasso did not converge for sample {i}",
                                       last_iterate=beta.copy(),
                                       diagnostics={"sample": i, "lam": lam})
            r2 = _r2(q, q.mean() + Z @ beta)
            chosen = lam
            if r2 >= r2_target:
                break
        support = set(np.flatnonzero(beta).tolist())
        intercept, coef = std.to_original(q.mean(), beta)
        if abs(intercept) > 1e-12 * max(1.0, np.abs(q).max()) or not support:
            support.add(0)
        idx = np.array(sorted(support))
        coef_refit = np.linalg.lstsq(dictionary.values[idx].T, q, rcond=None)[0]
        sets.append(idx)
        lams.append(chosen)
        r2s.append(r2)
        refits.append(dict(zip(idx.tolist(), coef_refit.tolist())))
    return SelectionResult.from_sets(sets, len(dictionary), lambdas=np.array(lams),
                                     r2=np.array(r2s), refit=refits)


# ---------------------------------------------------------------- LOO concordance

@dataclass
class ConcordanceReport:
    rho: np.ndarray
    rho0: float
    subset: np.ndarray


def _loo_bases(selection, subset):
    """Per-sample leave-one-out basis: subset elements chosen by some other sample."""
    subset = np.asarray(subset, dtype=np.int64)
    out = []
    for s in selection.sets:
        own = np.isin(subset, s)
        keep = selection.frequency[subset] - own >= 1
        out.append(subset[keep])
    return out


def loo_concordance(Q, dictionary, selection, subset):
    """Leave-one-out reconstruction concordance of every sample.

    Sample ``i`` is reconstructed from ``subset`` restricted to elements
    selected by at least one other sample; an empty restriction leaves the
    constant-only (zero-variance) reconstruction.
    """
    Q = check_quantile_matrix(Q, dictionary.grid)
    subset = np.asarray(subset, dtype=np.int64)
    if not np.all(np.isin(subset, selection.union)):
        raise SchemaError("candidate subset is not contained in the selected union")
    grid = dictionary.grid
    bases = _loo_bases(selection, subset)
    rho = np.empty(Q.shape[0])
    groups = {}
    for i, b in enumerate(bases):
        groups.setdefault(tuple(b.tolist()), []).append(i)
    for key, members in groups.items():
        members = np.array(members)
        if key:
            fitted = _weighted_lstsq_fit(dictionary.values[list(key)], Q[members], grid)
        else:
            fitted = np.repeat(grid.mean(Q[members])[:, None], grid.G, axis=1)
        rho[members] = concordance(Q[members], fitted, grid)
    return ConcordanceReport(rho, float(rho.min()), subset)


# ---------------------------------------------------------------- reduction

@dataclass
class ReductionResult:
    order: np.ndarray
    rho0_path: np.ndarray
    reached: bool


def rank_and_reduce(Q, dictionary, selection, rho_threshold=0.999, max_elements=None,
                    min_elements=1):
    """Greedy forward ordering of the union by leave-one-out concordance.

    Each step appends the element that maximizes the minimum per-sample
    concordance; ties go to the more frequently selected element, then
    the lower index. Stops once the minimum reaches ``rho_threshold`` and
    at least ``min_elements`` are ordered (so longer importance orderings
    can be requested), or when ``max_elements`` is reached.
    """
    if not 0 <= rho_threshold <= 1:
        raise ConfigError(f"rho_threshold must lie in [0, 1], got {rho_threshold}")
    candidates = [int(k) for k in selection.union]
    limit = len(candidates) if max_elements is None else min(max_elements, len(candidates))
    order, path = [], []
    rho0 = -np.inf
    while candidates and len(order) < limit:
        best = None
        for c in candidates:
            r = loo_concordance(Q, dictionary, selection, order + [c]).rho0
            key = (r, selection.frequency[c], -c)
            if best is None or _better(key, best[0]):
                best = (key, c)
        (rho0, _, _), c = best
        order.append(c)
        candidates.remove(c)
        path.append(rho0)
        if rho0 >= rho_threshold and len(order) >= min_elements:
            break
    reached = bool(path) and max(path) >= rho_threshold
    if not reached:
        warnings.warn(f"concordance threshold {rho_threshold} not reached "
                      f"(best {rho0:.6f} with {len(order)} elements)",
                      ThresholdNotReachedWarning, stacklevel=2)
    return ReductionResult(np.array(order, dtype=np.int64), np.array(path), reached)


def _better(a, b, tie=1e-12):
    if a[0] > b[0] + tie:
        return True
    if a[0] < b[0] - tie:
        return False
    return a[1:] > b[1:]


# ---------------------------------------------------------------- orthonormalization

def gram_schmidt(rows, grid, rel_tol=1e-10):
    """Modified Gram-Schmidt under the grid quadrature, with one re-pass.

    Returns the orthonormal rows and the indices of input rows kept.
    Rows whose remaining norm falls below ``rel_tol`` times their
    original norm are dropped with a :class:`RankDeficiencyWarning`.
    """
    out, kept = [], []
    for k, v in enumerate(np.asarray(rows, dtype=float)):
        norm0 = grid.norm(v)
        u = v.copy()
        for _ in range(2):
            for e in out:
                u = u - grid.inner(u, e) * e
        nu = grid.norm(u)
        if norm0 == 0 or nu < rel_tol * norm0:
            warnings.warn(f"row {k} is linearly dependent on earlier rows; dropped",
                          RankDeficiencyWarning, stacklevel=2)
            continue
        out.append(u / nu)
        kept.append(k)
    G = np.asarray(rows).shape[1]
    return (np.vstack(out) if out else np.empty((0, G))), np.array(kept, dtype=np.int64)


def wavelet_denoise(x, wavelet="sym8", mode="periodization"):
    """Soft-threshold the detail coefficients at the universal threshold.

    The noise scale comes from the median absolute deviation of the
    finest-level coefficients. Returns the denoised signal and the
    threshold used.
    """
    x = np.asarray(x, dtype=float)
    level = pywt.dwt_max_level(x.size, pywt.Wavelet(wavelet).dec_len)
    coeffs = pywt.wavedec(x, wavelet, mode=mode, level=level)
    sigma = np.median(np.abs(coeffs[-1])) / 0.6744897501960817
    thr = sigma * np.sqrt(2 * np.log(x.size))
    coeffs[1:] = [pywt.threshold(c, thr, mode="soft") for c in coeffs[1:]]
    return pywt.waverec(coeffs, wavelet, mode=mode)[: x.size], float(thr)


@dataclass
class QuantletBasis:
    """Orthonormal rows ``psi`` (K x G) in importance order."""

    grid: ProbabilityGrid
    psi: np.ndarray = field(repr=False)
    importance_order: np.ndarray
    denoise: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.psi.shape[0]

    def project(self, Q):
        """Least-squares coefficients; for orthonormal rows these are inner products."""
        Q = check_quantile_matrix(Q, self.grid)
        return self.grid.inner(Q, self.psi)

    def reconstruct(self, coef):
        return np.asarray(coef, dtype=float) @ self.psi

    def gram(self):
        return self.grid.inner(self.psi, self.psi)

    def to_dict(self):
        return {"grid": self.grid.to_dict(), "K": self.K,
                "importance_order": self.importance_order.tolist(),
                "psi": self.psi.tolist(), "denoise": self.denoise}

    @classmethod
    def from_dict(cls, d):
        grid = ProbabilityGrid.from_dict(d["grid"])
        psi = np.array(d["psi"], dtype=float).reshape(int(d["K"]), grid.G)
        return cls(grid, psi, np.array(d["importance_order"], dtype=np.int64), d.get("denoise", {}))


def finalize_basis(rows, grid, order=None, wavelet="sym8", denoise=True):
    """Orthonormalize, wavelet-denoise and re-orthonormalize ordered rows."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != grid.G:
        raise SchemaError(f"rows of shape {rows.shape} do not match grid length {grid.G}")
    order = np.arange(rows.shape[0]) if order is None else np.asarray(order, dtype=np.int64)
    psi, kept = gram_schmidt(rows, grid)
    order = order[kept]
    meta = {"family": None, "threshold": []}
    if denoise:
        den, thr = zip(*(wavelet_denoise(r, wavelet) for r in psi)) if len(psi) else ((), ())
        psi, kept = gram_schmidt(np.array(den).reshape(-1, grid.G), grid)
        order = order[kept]
        meta = {"family": wavelet, "mode": "periodization",
                "threshold": [float(thr[k]) for k in kept]}
    return QuantletBasis(grid, psi, order, meta)


def project_coefficients(Q, basis):
    return basis.project(Q)


# ---------------------------------------------------------------- estimators

class QuantletTransformer(TransformerMixin, BaseEstimator):
    """Learn a quantlet basis from a quantile matrix and map rows to coefficients.

    Parameters
    ----------
    grid : ProbabilityGrid or None
        Grid of the quantile matrix columns; may instead be passed to ``fit``.
    n_dictionary : int
        Number of Beta elements in the overcomplete dictionary.
    J : float
        Beta parameters are drawn uniformly from ``(0, J)^2``.
    rho_threshold : float
        Leave-one-out concordance at which the greedy reduction stops.
    r2_target : float
        Per-sample R^2 fixing the selection Lasso penalty.
    max_components : int or None
        Hard cap on the reduced basis size.
    min_components : int
        Keep ordering past the threshold until this many elements.
    denoise : bool
        Apply wavelet denoising to the orthonormalized rows.
    random_state : int
        Seed for the dictionary parameters.
    """

    def __init__(self, grid=None, n_dictionary=500, J=10.0, rho_threshold=0.999, r2_target=0.999,
                 n_lambda=50, lambda_min_ratio=1e-4, max_components=None, min_components=1,
                 wavelet="sym8", denoise=True, random_state=0):
        self.grid = grid
        self.n_dictionary = n_dictionary
        self.J = J
        self.rho_threshold = rho_threshold
        self.r2_target = r2_target
        self.n_lambda = n_lambda
        self.lambda_min_ratio = lambda_min_ratio
        self.max_components = max_components
        self.min_components = min_components
        self.wavelet = wavelet
        self.denoise = denoise
        self.random_state = random_state

    def fit(self, X, y=None, grid=None):
        grid = grid if grid is not None else self.grid
        if grid is None:
            raise ConfigError("QuantletTransformer needs the probability grid")
        Q = check_quantile_matrix(X, grid)
        self.dictionary_ = build_dictionary(grid, self.n_dictionary, self.J, self.random_state)
        self.selection_ = select_union_basis(Q, self.dictionary_, self.r2_target, self.n_lambda,
                                             self.lambda_min_ratio)
        self.reduction_ = rank_and_reduce(Q, self.dictionary_, self.selection_,
                                          self.rho_threshold, self.max_components,
                                          self.min_components)
        order = self.reduction_.order
        self.basis_ = finalize_basis(self.dictionary_.values[order], grid, order,
                                     self.wavelet, self.denoise)
        self.n_components_ = self.basis_.K
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        return self.basis_.project(X)

    def inverse_transform(self, X):
        check_is_fitted(self, "basis_")
        return self.basis_.reconstruct(X)


class PixelQuantletTransformer(TransformerMixin, BaseEstimator):
    """Ragged pixel samples to quantlet coefficients in one estimator."""

    def __init__(self, n_grid=128, delta=None, n_dictionary=500, J=10.0, rho_threshold=0.999,
                 r2_target=0.999, max_components=None, min_components=1, denoise=True,
                 random_state=0):
        self.n_grid = n_grid
        self.delta = delta
        self.n_dictionary = n_dictionary
        self.J = J
        self.rho_threshold = rho_threshold
        self.r2_target = r2_target
        self.max_components = max_components
        self.min_components = min_components
        self.denoise = denoise
        self.random_state = random_state

    def fit(self, X, y=None):
        self.quantiles_ = EmpiricalQuantileTransformer(self.n_grid, self.delta).fit(X)
        Q = self.quantiles_.transform(X)
        self.quantlets_ = QuantletTransformer(
            n_dictionary=self.n_dictionary, J=self.J, rho_threshold=self.rho_threshold,
            r2_target=self.r2_target, max_components=self.max_components,
            min_components=self.min_components, denoise=self.denoise,
            random_state=self.random_state,
        ).fit(Q, grid=self.quantiles_.grid_)
        return self

    def transform(self, X):
        check_is_fitted(self, "quantlets_")
        return self.quantlets_.transform(self.quantiles_.transform(X))
