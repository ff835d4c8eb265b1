"""Input validation helpers shared by the estimators."""
import numpy as np

from .exceptions import ConfigError, DegenerateLabelsError, DegenerateSampleError, SchemaError


def is_power_of_two(n):
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


def check_power_of_two(G, name="G"):
    if not is_power_of_two(G):
        raise ConfigError(f"{name} must be a power of two, got {G!r}")
    return int(G)


def check_samples(samples, min_size=2):
    """Validate a ragged collection of 1-D pixel samples.

    Returns a list of float arrays. Each sample must be finite and hold at
    least ``min_size`` values.
    """
    if isinstance(samples, np.ndarray) and samples.ndim == 2:
        samples = list(samples)
    out = []
    for i, s in enumerate(samples):
        arr = np.asarray(s, dtype=float).ravel()
        if arr.size < min_size:
            raise DegenerateSampleError(
                f"sample {i} has {arr.size} values, at least {min_size} required")
        if not np.all(np.isfinite(arr)):
            raise SchemaError(f"sample {i} contains non-finite values")
        out.append(arr)
    if not out:
        raise SchemaError("no samples given")
    return out


def check_binary_labels(y):
    y = np.asarray(y).ravel()
    if not np.all(np.isin(y, (0, 1))):
        raise SchemaError("labels must be 0/1")
    if np.unique(y).size < 2:
        raise DegenerateLabelsError("labels contain a single class")
    return y.astype(float)


def check_design(X, y=None):
    """2-D finite float design, optionally with a matching response vector."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise SchemaError(f"design must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise SchemaError("design contains non-finite entries")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise SchemaError(f"design has {X.shape[0]} rows but response has {y.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise SchemaError("response contains non-finite entries")
    return X, y


def check_quantile_matrix(Q, grid):
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 1:
        Q = Q[None, :]
    if Q.ndim != 2 or Q.shape[1] != grid.G:
        raise SchemaError(f"quantile matrix has shape {Q.shape}, grid has G={grid.G}")
    if not np.all(np.isfinite(Q)):
        raise SchemaError("quantile matrix contains non-finite entries")
    return Q
