"""Enhancement pattern mapping (EPM) from multi-phase intensity series.

A two-piece quadratic "normal tissue" curve is fitted to the ROI voxels;
each voxel's EPM value is the RMS deviation of its series from the curve.
"""
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateSampleError, SchemaError

VOXEL_REGIONS = ("normal_roi", "lesion", "peri", "liver", "background")
MIN_ROI_VOXELS = 6


@dataclass
class PhaseSeriesVolume:
    voxel_id: np.ndarray
    coords: np.ndarray
    intensities: np.ndarray
    region: np.ndarray
    phase_times: np.ndarray = None

    def __post_init__(self):
        self.voxel_id = np.asarray(self.voxel_id, dtype=np.int64)
        self.intensities = np.asarray(self.intensities, dtype=float)
        self.region = np.asarray(self.region, dtype=object)
        n = self.voxel_id.size
        self.coords = np.asarray(self.coords, dtype=np.int64).reshape(n, 3)
        if self.intensities.ndim != 2 or self.intensities.shape[0] != n:
            raise SchemaError("intensities must be an (n_voxels, n_phases) array")
        if self.intensities.shape[1] < 3:
            raise SchemaError("at least 3 contrast phases are required")
        if np.unique(self.voxel_id).size != n:
            raise SchemaError("voxel ids must be unique")
        bad = set(self.region) - set(VOXEL_REGIONS)
        if bad:
            raise SchemaError(f"unknown region labels {sorted(bad)}")
        if self.phase_times is None:
            self.phase_times = np.arange(self.n_phases, dtype=float)
        self.phase_times = np.asarray(self.phase_times, dtype=float)
        if self.phase_times.shape != (self.n_phases,) or np.any(np.diff(self.phase_times) <= 0):
            raise SchemaError("phase times must be strictly increasing, one per phase")

    @property
    def n_phases(self):
        return self.intensities.shape[1]


@dataclass
class NormalEnhancementCurve:
    """Quadratic pieces meeting at ``knot``.

    ``left`` and ``right`` hold coefficients ``(c0, c1, c2)`` of
    ``c0 + c1 t + c2 t^2``; the left piece applies for ``t <= knot``.
    """

    knot: float
    left: np.ndarray
    right: np.ndarray
    phase_times: np.ndarray
    rss: float = field(default=0.0, compare=False)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        lv = self.left[0] + self.left[1] * t + self.left[2] * t * t
        rv = self.right[0] + self.right[1] * t + self.right[2] * t * t
        return np.where(t <= self.knot, lv, rv)

    def continuity_gap(self):
        k = self.knot
        return abs(np.polyval(self.left[::-1], k) - np.polyval(self.right[::-1], k))


def _piece_design(t, knot, quad_left, quad_right):
    # shared value at the knot, separate slope/curvature on each side
    s = t - knot
    L = s < 0
    cols = [np.ones_like(t), np.where(L, s, 0.0)]
    if quad_left:
        cols.append(np.where(L, s * s, 0.0))
    cols.append(np.where(L, 0.0, s))
    if quad_right:
        cols.append(np.where(L, 0.0, s * s))
    return np.column_stack(cols)


def _to_power_basis(c0, c1, c2, knot):
    # c0 + c1 (t - k) + c2 (t - k)^2 expanded in powers of t
    return np.array([c0 - c1 * knot + c2 * knot * knot, c1 - 2 * c2 * knot, c2])


def fit_curve_at_knot(t, y, knot, phase_times):
    """Continuous two-piece least-squares fit for a fixed interior knot.

    A piece whose side of the knot (knot included) has fewer than three
    distinct phase times gets no curvature term.
    """
    quad_left = np.sum(phase_times <= knot) >= 3
    quad_right = np.sum(phase_times >= knot) >= 3
    X = _piece_design(t, knot, quad_left, quad_right)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    it = iter(coef)
    c0, l1 = next(it), next(it)
    l2 = next(it) if quad_left else 0.0
    r1 = next(it)
    r2 = next(it) if quad_right else 0.0
    rss = float(np.sum((y - X @ coef) ** 2))
    return NormalEnhancementCurve(float(knot), _to_power_basis(c0, l1, l2, knot),
                                  _to_power_basis(c0, r1, r2, knot), phase_times.copy(), rss)


def _roi_pairs(volumes):
    t_ref = volumes[0].phase_times
    ts, ys = [], []
    for v in volumes:
        if not np.array_equal(v.phase_times, t_ref):
            raise SchemaError("pooled volumes must share phase times")
        roi = v.intensities[v.region == "normal_roi"]
        ts.append(np.broadcast_to(v.phase_times, roi.shape).ravel())
        ys.append(roi.ravel())
    n_roi = sum(y.size for y in ys) // t_ref.size
    return t_ref, np.concatenate(ts), np.concatenate(ys), n_roi


def fit_normal_curve(volume, knot_candidates=None):
    """Fit the normal-tissue enhancement curve to the ``normal_roi`` voxels.

    ``volume`` may be a list of volumes, in which case ROI voxels are
    pooled across them (population curve). The knot is the interior phase
    time with the smallest residual sum of squares; near-ties go to the
    knot closest to the middle phase.
    """
    volumes = volume if isinstance(volume, (list, tuple)) else [volume]
    phase_times, t, y, n_roi = _roi_pairs(volumes)
    if n_roi < MIN_ROI_VOXELS:
        raise DegenerateSampleError(
            f"{n_roi} normal_roi voxels found, at least {MIN_ROI_VOXELS} required")
    if knot_candidates is None:
        knot_candidates = phase_times[1:-1]
    if np.all(y == y[0]):
        # identical intensities: exact constant curve, no rounding in the slopes
        flat = np.array([y[0], 0.0, 0.0])
        return NormalEnhancementCurve(float(np.median(phase_times)), flat, flat.copy(),
                                      phase_times.copy(), 0.0)
    fits = [fit_curve_at_knot(t, y, k, phase_times) for k in knot_candidates]
    rss = np.array([f.rss for f in fits])
    tol = 1e-12 * max(1.0, float(np.sum(y * y)))
    near = np.flatnonzero(rss <= rss.min() + tol)
    centre = float(np.median(phase_times))
    best = min(near, key=lambda i: (abs(knot_candidates[i] - centre), i))
    return fits[best]


def rmsd(intensities, reference):
    """Root-mean-square deviation of each row from ``reference``."""
    d = np.asarray(intensities, dtype=float) - np.asarray(reference, dtype=float)
    return np.sqrt(np.mean(d * d, axis=-1))


def compute_epm(volume, curve):
    """EPM value per non-background voxel, as ``{voxel_id: value}``."""
    if volume.n_phases != curve.phase_times.size:
        raise SchemaError("curve and volume have different numbers of phases")
    keep = volume.region != "background"
    vals = rmsd(volume.intensities[keep], curve(volume.phase_times))
    return dict(zip(volume.voxel_id[keep].tolist(), vals.tolist()))


class EPMMapper(TransformerMixin, BaseEstimator):
    """Fit the normal curve on ROI rows, then map every row to its EPM value.

    ``X`` is an ``(n_voxels, n_phases)`` intensity array.
    """

    def __init__(self, phase_times=None):
        self.phase_times = phase_times

    def fit(self, X, y=None, roi_mask=None):
        X = np.asarray(X, dtype=float)
        roi = np.ones(len(X), bool) if roi_mask is None else np.asarray(roi_mask, bool)
        region = np.where(roi, "normal_roi", "liver").astype(object)
        vol = PhaseSeriesVolume(np.arange(len(X)), np.zeros((len(X), 3)), X, region,
                                self.phase_times)
        self.curve_ = fit_normal_curve(vol)
        return self

    def transform(self, X):
        check_is_fitted(self, "curve_")
        return rmsd(X, self.curve_(self.curve_.phase_times))
