"""Seeded synthetic cohorts with known class-conditional pixel distributions."""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError


class SpecError(ConfigError):
    pass


FAMILIES = ("normal", "lognormal", "mixture", "shifted_gamma")


def _check_family(f):
    kind = f.get("family")
    if kind not in FAMILIES:
        raise SpecError(f"unknown family {kind!r}; expected one of {FAMILIES}")
    if kind == "normal":
        if not f.get("sigma", 1.0) > 0:
            raise SpecError("normal sigma must be positive")
    elif kind == "lognormal":
        if not f.get("sigma", 1.0) > 0:
            raise SpecError("lognormal sigma must be positive")
    elif kind == "mixture":
        w = f.get("weight", 0.5)
        if not 0 < w < 1:
            raise SpecError("mixture weight must lie in (0, 1)")
        if len(f.get("means", ())) != 2 or len(f.get("sigmas", ())) != 2:
            raise SpecError("mixture needs two means and two sigmas")
        if min(f["sigmas"]) <= 0:
            raise SpecError("mixture sigmas must be positive")
    elif kind == "shifted_gamma":
        if not (f.get("shape", 1.0) > 0 and f.get("scale", 1.0) > 0):
            raise SpecError("gamma shape and scale must be positive")
    return f


def family_moments(f):
    """Analytic mean and variance of a family specification."""
    kind = f["family"]
    if kind == "normal":
        return float(f.get("mu", 0.0)), float(f.get("sigma", 1.0)) ** 2
    if kind == "lognormal":
        mu, s2 = f.get("mu", 0.0), f.get("sigma", 1.0) ** 2
        return float(np.exp(mu + s2 / 2)), float(np.expm1(s2) * np.exp(2 * mu + s2))
    if kind == "mixture":
        w = f.get("weight", 0.5)
        (m1, m2), (s1, s2) = f["means"], f["sigmas"]
        mean = w * m1 + (1 - w) * m2
        second = w * (s1 ** 2 + m1 ** 2) + (1 - w) * (s2 ** 2 + m2 ** 2)
        return float(mean), float(second - mean ** 2)
    k, th = f.get("shape", 1.0), f.get("scale", 1.0)
    return float(f.get("shift", 0.0) + k * th), float(k * th ** 2)


def draw(f, m, rng):
    kind = f["family"]
    if kind == "normal":
        return rng.normal(f.get("mu", 0.0), f.get("sigma", 1.0), m)
    if kind == "lognormal":
        return rng.lognormal(f.get("mu", 0.0), f.get("sigma", 1.0), m)
    if kind == "mixture":
        comp = rng.random(m) < f.get("weight", 0.5)
        (m1, m2), (s1, s2) = f["means"], f["sigmas"]
        return np.where(comp, rng.normal(m1, s1, m), rng.normal(m2, s2, m))
    return f.get("shift", 0.0) + rng.gamma(f.get("shape", 1.0), f.get("scale", 1.0), m)


def equal_mean_families(a=0.9, variance_gap=0.0):
    """Class 0 ``N(0, 1)`` and class 1 ``0.5 N(-a, t) + 0.5 N(a, t)``.

    ``t`` is chosen so the mixture variance is ``1 + variance_gap``; both
    class means are exactly zero.
    """
    t2 = 1.0 + variance_gap - a * a
    if t2 <= 0:
        raise SpecError(f"separation a={a} too large for variance 1 + {variance_gap}")
    return {"0": [{"family": "normal", "mu": 0.0, "sigma": 1.0}],
            "1": [{"family": "mixture", "weight": 0.5, "means": [-a, a],
                   "sigmas": [float(np.sqrt(t2))] * 2}]}


@dataclass
class CohortSpec:
    """Cohort layout.

    ``families`` maps the class label ("0"/"1") to a list of family
    dictionaries; each sample draws one family uniformly from its class's
    list. ``demographic_effects`` and ``radiomic_effects`` give per-column
    mean shifts of class 1 over class 0 (unit-variance normal columns).
    """

    n_per_class: tuple = (50, 50)
    m_range: tuple = (200, 2000)
    families: dict = field(default_factory=lambda: equal_mean_families())
    regions: tuple = ("lesion",)
    demographic_effects: tuple = (0.0, 0.0)
    radiomic_effects: tuple = ()
    equal_mean: bool = False
    seed: int = 0

    def __post_init__(self):
        self.n_per_class = tuple(int(n) for n in self.n_per_class)
        self.m_range = tuple(int(m) for m in self.m_range)
        self.regions = tuple(self.regions)
        if len(self.n_per_class) != 2 or min(self.n_per_class) < 1:
            raise SpecError("n_per_class needs two positive counts")
        lo, hi = self.m_range
        if lo < 20 or hi < lo:
            raise SpecError(f"pixel-count range must satisfy 20 <= m_min <= m_max, got {self.m_range}")
        fams = {}
        for cls in ("0", "1"):
            fl = self.families.get(cls, self.families.get(int(cls)))
            if fl is None:
                raise SpecError(f"no families given for class {cls}")
            fams[cls] = [_check_family(dict(f)) for f in (fl if isinstance(fl, list) else [fl])]
        self.families = fams
        if self.equal_mean:
            means = [family_moments(f)[0] for cls in ("0", "1") for f in fams[cls]]
            if max(means) - min(means) > 1e-12:
                raise SpecError(f"equal-mean mode but analytic means differ: {means}")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.pop("equal_mean_separation", None) is not None:
            raise SpecError("use 'families': {'equal_mean': {...}} for equal-mean cohorts")
        fam = d.get("families")
        if isinstance(fam, dict) and "equal_mean" in fam:
            d["families"] = equal_mean_families(**fam["equal_mean"])
            d["equal_mean"] = True
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown cohort spec keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class Cohort:
    sample_ids: list
    labels: np.ndarray
    pixels: dict          # region -> list of arrays, aligned with sample_ids
    demographics: np.ndarray
    radiomics: np.ndarray
    family_index: np.ndarray


def generate_cohort(spec):
    """Draw a cohort; every sample has its own seed-split random stream."""
    if isinstance(spec, dict):
        spec = CohortSpec.from_dict(spec)
    n0, n1 = spec.n_per_class
    labels = np.r_[np.zeros(n0, int), np.ones(n1, int)]
    n = labels.size
    width = len(str(n - 1))
    ids = [f"s{i:0{width}d}" for i in range(n)]
    streams = np.random.SeedSequence(spec.seed).spawn(n)
    dw, dz = len(spec.demographic_effects), len(spec.radiomic_effects)
    W = np.empty((n, dw))
    R = np.empty((n, dz))
    pixels = {r: [] for r in spec.regions}
    fam_idx = np.empty(n, dtype=int)
    for i, (y, ss) in enumerate(zip(labels, streams)):
        rng = np.random.default_rng(ss)
        fams = spec.families[str(y)]
        k = int(rng.integers(len(fams)))
        fam_idx[i] = k
        for region in spec.regions:
            m = int(rng.integers(spec.m_range[0], spec.m_range[1] + 1))
            pixels[region].append(draw(fams[k], m, rng))
        W[i] = rng.normal(size=dw) + y * np.asarray(spec.demographic_effects, float)
        R[i] = rng.normal(size=dz) + y * np.asarray(spec.radiomic_effects, float)
    return Cohort(ids, labels, pixels, W, R, fam_idx)
