"""Empirical quantile functions on a shared trimmed probability grid."""
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_power_of_two, check_samples
from .exceptions import DegenerateSampleError, SchemaError

REGIONS = ("lesion", "peri", "liver")
DEFAULT_G = {"liver": 512, "lesion": 128, "peri": 128}


@dataclass(frozen=True, eq=False)
class ProbabilityGrid:
    """Uniform grid on ``[delta, 1 - delta]`` with trapezoidal quadrature.

    Inner products and moments over the grid approximate integrals against
    the uniform measure. ``weights`` sum to ``1 - 2 * delta``.
    """

    G: int
    delta: float
    points: np.ndarray = field(repr=False)

    @classmethod
    def from_delta(cls, G, delta):
        G = check_power_of_two(G)
        if not 0 < delta < 0.5:
            raise DegenerateSampleError(f"trim level must lie in (0, 0.5), got {delta}")
        j = np.arange(G)
        points = delta + j * (1.0 - 2.0 * delta) / (G - 1)
        points[-1] = 1.0 - delta
        points.setflags(write=False)
        return cls(G, float(delta), points)

    @property
    def weights(self):
        h = (1.0 - 2.0 * self.delta) / (self.G - 1)
        w = np.full(self.G, h)
        w[0] = w[-1] = h / 2
        return w

    def inner(self, f, g):
        """Quadrature inner product; broadcasts over leading axes."""
        return np.asarray(f) * self.weights @ np.asarray(g).T

    def norm(self, f):
        return np.sqrt(self.inner(f, f))

    def mean(self, f):
        w = self.weights
        return np.asarray(f) @ w / w.sum()

    def __eq__(self, other):
        return (isinstance(other, ProbabilityGrid) and self.G == other.G
                and np.array_equal(self.points, other.points))

    def __hash__(self):
        return hash((self.G, self.delta))

    def to_dict(self):
        return {"G": self.G, "delta": self.delta, "points": self.points.tolist()}

    @classmethod
    def from_dict(cls, d):
        grid = cls.from_delta(int(d["G"]), float(d["delta"]))
        if "points" in d and not np.allclose(grid.points, d["points"], rtol=0, atol=1e-15):
            raise SchemaError("serialized grid points do not match (G, delta)")
        return grid


def standard_grid(sample_sizes, G):
    """Grid shared by all samples: ``delta = max_i 1 / (m_i + 1)``.

    >>> g = standard_grid([9, 99], 4)
    >>> g.delta
    0.1
    """
    G = check_power_of_two(G)
    sizes = np.asarray(sample_sizes)
    if sizes.size == 0:
        raise SchemaError("no sample sizes given")
    if np.any(sizes < 2):
        raise DegenerateSampleError(
            f"every sample needs at least 2 values, smallest has {sizes.min()}")
    delta = float(np.max(1.0 / (sizes + 1.0)))
    return ProbabilityGrid.from_delta(G, delta)


def empirical_quantiles(values, grid):
    """Interpolated order statistics at the grid probabilities.

    For each ``p`` the position ``h = (m + 1) p`` is split into an integer
    part ``k`` and fractional weight ``w``, and the result is
    ``(1 - w) X(k) + w X(k+1)`` with ``k`` clamped to ``[1, m - 1]``.
    """
    x = np.sort(np.asarray(values, dtype=float).ravel())
    m = x.size
    if m < 2:
        raise DegenerateSampleError(f"sample has {m} values, at least 2 required")
    if grid.delta < 1.0 / (m + 1) * (1 - 1e-12):
        raise DegenerateSampleError(
            f"grid trim {grid.delta:.6g} is below 1/(m+1) = {1.0 / (m + 1):.6g} for m={m}")
    h = (m + 1) * grid.points
    k = np.clip(np.floor(h).astype(np.int64), 1, m - 1)
    w = np.clip(h - k, 0.0, 1.0)
    lo = x[k - 1]
    hi = x[k]
    q = lo + w * (hi - lo)
    # rounding must neither reorder neighbours nor escape the order statistics
    return np.clip(np.maximum.accumulate(q), x[0], x[-1])


@dataclass
class QuantileFunction:
    sample_id: str
    region: str
    grid: ProbabilityGrid
    values: np.ndarray


class EmpiricalQuantileTransformer(TransformerMixin, BaseEstimator):
    """Map ragged pixel samples to rows of a quantile matrix.

    ``fit`` fixes the shared grid from the sample sizes it sees (or uses
    ``delta`` when given); ``transform`` evaluates each sample's empirical
    quantile function on that grid.

    Parameters
    ----------
    n_grid : int
        Number of grid points, a power of two.
    delta : float or None
        Fixed trim level. ``None`` derives it from the training samples.
    """

    def __init__(self, n_grid=128, delta=None):
        self.n_grid = n_grid
        self.delta = delta

    def fit(self, X, y=None):
        samples = check_samples(X)
        if self.delta is None:
            self.grid_ = standard_grid([s.size for s in samples], self.n_grid)
        else:
            self.grid_ = ProbabilityGrid.from_delta(self.n_grid, self.delta)
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        samples = check_samples(X)
        return np.vstack([empirical_quantiles(s, self.grid_) for s in samples])
