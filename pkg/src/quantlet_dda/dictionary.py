"""Overcomplete quantlet dictionary: Gaussian pair plus projected Beta CDFs."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigError, SchemaError
from .quantile import ProbabilityGrid
from .special import betainc, norm_ppf

KINDS = ("constant", "gaussian", "beta")


def _tanh_sinh_rule(h=1.0 / 32, t_max=3.5):
    # double-exponential nodes on [0, 1]; robust to endpoint singularities
    t = np.arange(-t_max, t_max + h / 2, h)
    s = 0.5 * np.pi * np.sinh(t)
    u = 0.5 * (1.0 + np.tanh(s))
    w = h * 0.25 * np.pi * np.cosh(t) / np.cosh(s) ** 2
    keep = (u > 0) & (u < 1)
    return u[keep], w[keep]


_TS_NODES, _TS_WEIGHTS = _tanh_sinh_rule()


def beta_cdf_moments(a, b):
    """Mean and standard deviation of ``F_ab(u)`` over ``u ~ U(0, 1)``."""
    F = betainc(a, b, _TS_NODES)
    mu = float(F @ _TS_WEIGHTS)
    var = float((F - mu) ** 2 @ _TS_WEIGHTS)
    return mu, np.sqrt(max(var, 0.0))


@dataclass
class DictionaryElement:
    kind: str
    values: np.ndarray
    theta: Optional[tuple] = None


def gaussian_bases(grid):
    """Constant basis and standard normal quantile function on the grid."""
    return np.ones(grid.G), norm_ppf(grid.points)


def _orthonormal_gaussian_pair(grid):
    z1, z2 = gaussian_bases(grid)
    e1 = z1 / grid.norm(z1)
    e2 = z2 - grid.inner(z2, e1) * e1
    e2 = e2 / grid.norm(e2)
    return e1, e2


def project_out_gaussian(f, grid, pair=None):
    """Remove the quadrature projections of ``f`` onto the normalized Gaussian pair."""
    e1, e2 = pair if pair is not None else _orthonormal_gaussian_pair(grid)
    f = np.asarray(f, dtype=float)
    for _ in range(2):
        f = f - np.multiply.outer(grid.inner(f, e1), e1) - np.multiply.outer(grid.inner(f, e2), e2)
    return f


def beta_element(theta, grid, pair=None):
    """Standardized Beta CDF with its Gaussian component projected out."""
    a, b = map(float, theta)
    if not (a > 0 and b > 0):
        raise ConfigError(f"beta parameters must be positive, got {theta}")
    F = betainc(a, b, grid.points)
    mu, sigma = beta_cdf_moments(a, b)
    if sigma <= 0:
        raise ConfigError(f"beta CDF with theta={theta} is numerically constant")
    f = (F - mu) / sigma
    return DictionaryElement("beta", project_out_gaussian(f, grid, pair), (a, b))


@dataclass
class OvercompleteDictionary:
    """``K0 + 2`` candidate elements; row ``k`` of ``values`` is element ``k``.

    Rows 0 and 1 are the constant and Gaussian bases; rows ``2..K0+1`` are
    projected Beta CDFs with parameters ``thetas[k]``.
    """

    grid: ProbabilityGrid
    values: np.ndarray = field(repr=False)
    thetas: np.ndarray = field(repr=False)
    J: float
    K0: int
    seed: int

    @property
    def kinds(self):
        return ["constant", "gaussian"] + ["beta"] * self.K0

    def __len__(self):
        return self.values.shape[0]

    @property
    def elements(self):
        out = []
        for k, kind in enumerate(self.kinds):
            theta = tuple(self.thetas[k]) if kind == "beta" else None
            out.append(DictionaryElement(kind, self.values[k], theta))
        return out

    def to_dict(self):
        elems = []
        for k, kind in enumerate(self.kinds):
            a, b = (self.thetas[k] if kind == "beta" else (None, None))
            elems.append({"kind": kind,
                          "a": None if a is None else float(a),
                          "b": None if b is None else float(b),
                          "values": self.values[k].tolist()})
        return {"grid": self.grid.to_dict(), "J": self.J, "K0": self.K0,
                "seed": self.seed, "elements": elems}

    @classmethod
    def from_dict(cls, d):
        grid = ProbabilityGrid.from_dict(d["grid"])
        elems = d["elements"]
        if len(elems) != int(d["K0"]) + 2:
            raise SchemaError("dictionary element count does not equal K0 + 2")
        values = np.array([e["values"] for e in elems], dtype=float)
        if values.shape[1] != grid.G:
            raise SchemaError("dictionary elements do not match grid length")
        thetas = np.array([[np.nan, np.nan] if e["kind"] != "beta" else [e["a"], e["b"]]
                           for e in elems], dtype=float)
        return cls(grid, values, thetas, float(d["J"]), int(d["K0"]), int(d["seed"]))


def sample_beta_parameters(K0, J, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(np.nextafter(0.0, 1.0), J, size=(K0, 2))


def build_dictionary(grid, K0=500, J=10.0, seed=0):
    """Gaussian pair followed by ``K0`` Beta elements with ``theta ~ U(0, J)^2``."""
    if K0 < 0:
        raise ConfigError(f"K0 must be non-negative, got {K0}")
    if not J > 0:
        raise ConfigError(f"J must be positive, got {J}")
    z1, z2 = gaussian_bases(grid)
    pair = _orthonormal_gaussian_pair(grid)
    thetas = sample_beta_parameters(K0, J, seed)
    rows = [z1, z2] + [beta_element(t, grid, pair).values for t in thetas]
    all_thetas = np.vstack([np.full((2, 2), np.nan), thetas])
    return OvercompleteDictionary(grid, np.vstack(rows), all_thetas, float(J), int(K0), int(seed))
