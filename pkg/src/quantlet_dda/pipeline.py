"""Pipeline stages driven by a JSON configuration."""
import copy
import hashlib
import json
import platform
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import assemble_features, fit_model, parse_feature_set, uses_k
from .epm import compute_epm, fit_normal_curve
from .evaluation import F1_MODES, loocv_evaluate, loocv_evaluate_refit, select_lambda
from .exceptions import ConfigError, SchemaError
from .io import (ArtifactWriter, read_coefficients, read_covariates, read_pixels, read_quantiles,
                 read_table, read_volume, sha256_file, write_coefficients, write_epm,
                 write_pixels, write_quantiles, write_table)
from .quantile import DEFAULT_G, empirical_quantiles, standard_grid
from .quantlet import QuantletTransformer, ThresholdNotReachedWarning, concordance, loo_concordance
from .synth import CohortSpec, generate_cohort

DEFAULTS = {
    "paths": {"out_dir": "out", "pixels": None, "covariates": None, "volumes": []},
    "grid": {"G": dict(DEFAULT_G)},
    "dictionary": {"K0": 500, "J": 10.0, "seed": 0},
    "quantlet": {"rho_threshold": 0.999, "r2_target": 0.999, "n_lambda": 50,
                 "lambda_min_ratio": 1e-4, "min_components": 1, "max_components": None,
                 "denoise": True, "wavelet": "sym8"},
    "model": {"regions": ["lesion"], "feature_sets": ["D", "Mean", "Median", "EQ", "Q", "R", "Q+R"],
              "K_use": [10], "threshold": 0.5, "zero_fill": False,
              "fit_feature_set": "Q", "fit_K": 10},
    "eval": {"folds": 10, "seed": 0, "f1_mode": "precision_recall", "scoring": "deviance",
             "n_jobs": 1, "basis_mode": "full"},
    "epm": {"pooling": "patient"},
    "synth": None,
}

BUNDLED_CONFIG = Path(__file__).with_name("data") / "synthetic_config.json"


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_scalar(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg, overrides):
    """Apply ``section.key=value`` overrides to scalar config entries."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        parts = key.split(".")
        node = cfg
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"override {key!r} does not name a config entry")
            node = node[p]
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"override {key!r} targets a section, not a scalar")
        node[parts[-1]] = _parse_scalar(val)
    return cfg


def validate_config(cfg):
    q, m, e, d = cfg["quantlet"], cfg["model"], cfg["eval"], cfg["dictionary"]
    checks = [
        (0 < q["rho_threshold"] <= 1, "quantlet.rho_threshold must lie in (0, 1]"),
        (0 < q["r2_target"] <= 1, "quantlet.r2_target must lie in (0, 1]"),
        (int(d["K0"]) >= 0, "dictionary.K0 must be non-negative"),
        (float(d["J"]) > 0, "dictionary.J must be positive"),
        (int(e["folds"]) >= 2, "eval.folds must be at least 2"),
        (e["f1_mode"] in F1_MODES, f"eval.f1_mode must be one of {F1_MODES}"),
        (0 < float(m["threshold"]) < 1, "model.threshold must lie in (0, 1)"),
        (all(int(k) >= 1 for k in m["K_use"]), "model.K_use entries must be positive"),
        (e["basis_mode"] in ("full", "fold"), "eval.basis_mode must be full|fold"),
        (cfg["epm"]["pooling"] in ("patient", "population"), "epm.pooling must be patient|population"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    for fs in m["feature_sets"]:
        parse_feature_set(fs)
    return cfg


def load_config(path=None, overrides=None):
    path = Path(path) if path else BUNDLED_CONFIG
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    cfg = apply_overrides(_merge(DEFAULTS, raw), overrides)
    cfg["_source"] = str(path)
    return validate_config(cfg)


def config_hash(cfg):
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    return hashlib.sha256(json.dumps(clean, sort_keys=True).encode()).hexdigest()


class Pipeline:
    """Runs stages into ``out_dir``; every written file is tracked for rollback."""

    def __init__(self, cfg, base_dir=None):
        self.cfg = cfg
        if base_dir is None:
            src = cfg.get("_source")
            # the bundled config lives inside the package; resolve against cwd
            base_dir = Path.cwd() if src in (None, str(BUNDLED_CONFIG)) else Path(src).parent
        base = Path(base_dir)
        out = Path(cfg["paths"]["out_dir"])
        self.base = base
        self.out = out if out.is_absolute() else base / out
        self.writer = ArtifactWriter()

    def _in(self, key, default_name):
        p = self.cfg["paths"].get(key)
        if p is None:
            return self.out / default_name
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    @property
    def regions(self):
        return list(self.cfg["model"]["regions"])

    # -- stages

    def synth(self):
        spec = self.cfg["synth"]
        if not spec:
            raise ConfigError("config has no synth section")
        cohort = generate_cohort(CohortSpec.from_dict(spec))
        pixels = {r: dict(zip(cohort.sample_ids, cohort.pixels[r])) for r in cohort.pixels}
        write_pixels(self.writer, self.out / "pixels.csv", pixels)
        import pandas as pd
        cov = pd.DataFrame({"label": cohort.labels}, index=pd.Index(cohort.sample_ids, name="sample_id"))
        for j in range(cohort.demographics.shape[1]):
            cov[f"demo_{j + 1}"] = cohort.demographics[:, j]
        for j in range(cohort.radiomics.shape[1]):
            cov[f"rad_{j + 1}"] = cohort.radiomics[:, j]
        write_table(self.writer, self.out / "covariates.csv", cov)

    def epm(self):
        vols = [self._abs(v) for v in self.cfg["paths"]["volumes"]]
        if not vols:
            raise ConfigError("paths.volumes is empty")
        volumes = [read_volume(v) for v in vols]
        pooled = fit_normal_curve(volumes) if self.cfg["epm"]["pooling"] == "population" else None
        for path, vol in zip(vols, volumes):
            curve = pooled or fit_normal_curve(vol)
            write_epm(self.writer, self.out / f"epm_{Path(path).stem}.csv", compute_epm(vol, curve))

    def _abs(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def quantiles(self):
        pixels = read_pixels(self._in("pixels", "pixels.csv"))
        import pandas as pd
        summaries = {}
        for region in self.regions:
            if region not in pixels:
                raise SchemaError(f"pixel table has no samples for region {region!r}")
            ids = list(pixels[region])
            samples = [pixels[region][s] for s in ids]
            G = int(self.cfg["grid"]["G"].get(region, DEFAULT_G.get(region, 128)))
            grid = standard_grid([s.size for s in samples], G)
            Q = np.vstack([empirical_quantiles(s, grid) for s in samples])
            write_quantiles(self.writer, self.out / f"quantiles_{region}.csv", region, ids, Q, grid)
            summaries[f"mean_{region}"] = pd.Series([s.mean() for s in samples], index=ids)
            summaries[f"median_{region}"] = pd.Series([np.median(s) for s in samples], index=ids)
        table = pd.DataFrame(summaries)
        table.index.name = "sample_id"
        write_table(self.writer, self.out / "summaries.csv", table)

    def _quantlets(self, grid):
        qc, dc = self.cfg["quantlet"], self.cfg["dictionary"]
        return QuantletTransformer(
            grid=grid, n_dictionary=int(dc["K0"]), J=float(dc["J"]),
            rho_threshold=qc["rho_threshold"], r2_target=qc["r2_target"],
            n_lambda=int(qc["n_lambda"]), lambda_min_ratio=qc["lambda_min_ratio"],
            max_components=qc["max_components"], min_components=int(qc["min_components"]),
            wavelet=qc["wavelet"], denoise=bool(qc["denoise"]), random_state=int(dc["seed"]))

    def basis(self):
        for region in self.regions:
            _, ids, Q, grid = read_quantiles(self.out / f"quantiles_{region}.csv")
            est = self._quantlets(grid).fit(Q)
            basis = est.basis_
            doc = basis.to_dict()
            doc["reduction"] = {"rho0_path": est.reduction_.rho0_path.tolist(),
                                "reached": est.reduction_.reached,
                                "union_size": int(est.selection_.union.size)}
            self.writer.write_json(self.out / f"basis_{region}.json", doc)
            C = basis.project(Q)
            write_coefficients(self.writer, self.out / f"coefficients_{region}.csv", region, ids, C)
            loo = loo_concordance(Q, est.dictionary_, est.selection_, est.reduction_.order)
            rec = concordance(Q, basis.reconstruct(C), grid)
            rows = [[s, repr(float(a)), repr(float(b))] for s, a, b in zip(ids, loo.rho, rec)]
            self.writer.write_rows(self.out / f"concordance_{region}.csv",
                                   ["sample_id", "rho_loo", "rho_basis"], rows)

    def features(self):
        import pandas as pd
        table = read_covariates(self._in("covariates", "covariates.csv"))
        parts = [table]
        summaries = read_table_noindex(self.out / "summaries.csv")
        parts.append(summaries)
        for region in self.regions:
            _, ids, Q, grid = read_quantiles(self.out / f"quantiles_{region}.csv")
            parts.append(pd.DataFrame(Q, index=ids, columns=[f"eq_{region}_{j + 1}" for j in range(grid.G)]))
            _, cids, C = read_coefficients(self.out / f"coefficients_{region}.csv")
            parts.append(pd.DataFrame(C, index=cids, columns=[f"q_{region}_{k + 1}" for k in range(C.shape[1])]))
        feats = pd.concat(parts, axis=1, join="outer")
        feats = feats.loc[table.index]
        feats.index.name = "sample_id"
        write_table(self.writer, self.out / "features.csv", feats)

    def _design(self, table, fs, k):
        m = self.cfg["model"]
        return assemble_features(table, parse_feature_set(fs), self.regions, k, m["zero_fill"])

    def _fold_builder(self, table, fs, k):
        """Design builder that relearns each region's basis on the training rows."""
        quantiles = {}
        for region in self.regions:
            _, ids, Q, grid = read_quantiles(self.out / f"quantiles_{region}.csv")
            pos = {s: j for j, s in enumerate(ids)}
            rows = [pos.get(s) for s in table.index]
            quantiles[region] = (Q, grid, rows)

        def build(train):
            fold = table.copy()
            for region, (Q, grid, rows) in quantiles.items():
                have = np.array([r is not None for r in rows])
                idx = np.array([r for r in rows if r is not None], dtype=int)
                fit_rows = idx[train[have]]
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", ThresholdNotReachedWarning)
                    basis = self._quantlets(grid).fit(Q[fit_rows]).basis_
                C = np.full((len(rows), basis.K), np.nan)
                C[have] = basis.project(Q[idx])
                qcols = [c for c in fold.columns if c.startswith(f"q_{region}_")]
                fold = fold.drop(columns=qcols)
                for j in range(basis.K):
                    fold[f"q_{region}_{j + 1}"] = C[:, j]
            design, _ = self._design(fold, fs, k)
            return design.values, design.penalty_mask
        return build

    def evaluate(self):
        table = read_table(self.out / "features.csv")
        m, e = self.cfg["model"], self.cfg["eval"]
        rows = []
        for fs in m["feature_sets"]:
            for k in (m["K_use"] if uses_k(fs) else [None]):
                design, y = self._design(table, fs, k)
                fold_mode = e["basis_mode"] == "fold" and "quantlet" in parse_feature_set(fs)
                if fold_mode:
                    lam = select_lambda(design.values, y.astype(float), design.penalty_mask,
                                        int(e["folds"]), int(e["seed"]), e["scoring"])
                    res = loocv_evaluate_refit(self._fold_builder(table, fs, k), y, lam,
                                               float(m["threshold"]), e["f1_mode"],
                                               int(e["n_jobs"]), fs, k)
                else:
                    res = loocv_evaluate(design.values, y, design.penalty_mask, int(e["folds"]),
                                         int(e["seed"]), float(m["threshold"]),
                                         f1_mode=e["f1_mode"], scoring=e["scoring"],
                                         n_jobs=int(e["n_jobs"]), features=fs, K=k)
                rows.append(res.metrics.as_csv_row())
                tag = fs.replace("+", "_") + ("" if k is None else f"_{k}")
                pred = [[sid, int(t), repr(float(p)), int(q)]
                        for sid, t, p, q in zip(table.index, y, res.prob, res.y_pred)]
                self.writer.write_rows(self.out / "predictions" / f"{tag}.csv",
                                       ["sample_id", "y_true", "prob", "y_pred"], pred)
        self.writer.write_rows(self.out / "metrics.csv",
                               ["features", "K", "sens", "spec", "f1", "acc"], rows)

    def fit(self):
        table = read_table(self.out / "features.csv")
        m, e = self.cfg["model"], self.cfg["eval"]
        fs = m["fit_feature_set"]
        k = int(m["fit_K"]) if uses_k(fs) else None
        design, y = self._design(table, fs, k)
        lam = select_lambda(design.values, y.astype(float), design.penalty_mask,
                            int(e["folds"]), int(e["seed"]), e["scoring"])
        basis_ref = {r: f"basis_{r}.json" for r in self.regions} if fs.startswith("Q") else {}
        fit = fit_model(design, y, lam, k, float(m["threshold"]), basis_ref)
        doc = fit.to_dict()
        doc["feature_set"] = fs
        self.writer.write_json(self.out / "model.json", doc)

    def all(self):
        if self.cfg["synth"] and self.cfg["paths"].get("pixels") is None:
            self.synth()
        if self.cfg["paths"]["volumes"]:
            self.epm()
        self.quantiles()
        self.basis()
        self.features()
        self.evaluate()
        self.fit()

    def manifest(self, command):
        arts = {}
        for p in sorted(set(self.writer.written)):
            arts[str(p.relative_to(self.out)) if p.is_relative_to(self.out) else str(p)] = sha256_file(p)
        import numba, pywt, scipy, sklearn
        doc = {
            "command": command,
            "config_sha256": config_hash(self.cfg),
            "seeds": {"dictionary": self.cfg["dictionary"]["seed"], "eval": self.cfg["eval"]["seed"],
                      "synth": (self.cfg["synth"] or {}).get("seed")},
            "versions": {"quantlet_dda": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__,
                         "scikit-learn": sklearn.__version__, "pywavelets": pywt.__version__,
                         "numba": numba.__version__},
            "artifacts": arts,
        }
        self.writer.write_json(self.out / "manifest.json", doc)
        return doc


def read_table_noindex(path):
    import pandas as pd
    return pd.read_csv(path, dtype={"sample_id": str}, float_precision="round_trip").set_index("sample_id")


STAGES = ("epm", "quantiles", "basis", "features", "fit", "evaluate", "synth", "all")


def run_stage(cfg, command, base_dir=None):
    if command not in STAGES:
        raise ConfigError(f"unknown subcommand {command!r}")
    pipe = Pipeline(cfg, base_dir)
    try:
        getattr(pipe, command)()
        pipe.manifest(command)
    except BaseException:
        pipe.writer.rollback()
        raise
    return pipe
