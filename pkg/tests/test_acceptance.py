"""End-to-end acceptance checks; each test records one PASS/FAIL line."""
import json
import time
import warnings

import numpy as np
import pytest

from quantlet_dda import cli
from quantlet_dda.classifier import assemble_features, parse_feature_set
from quantlet_dda.dictionary import build_dictionary
from quantlet_dda.epm import PhaseSeriesVolume, compute_epm, fit_normal_curve
from quantlet_dda.evaluation import confusion_metrics, loocv_evaluate
from quantlet_dda.l1solver import SeparationWarning, lasso_fit, logistic_l1_fit, logistic_lambda_max
from quantlet_dda.pipeline import BUNDLED_CONFIG
from quantlet_dda.quantile import empirical_quantiles, standard_grid
from quantlet_dda.quantlet import finalize_basis, rank_and_reduce, select_union_basis
from quantlet_dda.special import norm_ppf
from quantlet_dda.synth import CohortSpec, equal_mean_families, generate_cohort

from conftest import feature_table, quantile_matrix
from test_epm import constrained_ls_oracle
from test_l1solver import logistic_data, logistic_kkt_oracle, newton_mle
from test_quantile import oracle_quantiles

RESULTS = {}
BASES = []


def record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    assert ok, line


def test_criterion_1_quantile_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(20, 5001))
        x = rng.lognormal(rng.normal(), rng.uniform(0.2, 1.5), m)
        grid = standard_grid([m], 128)
        worst = max(worst, float(np.max(np.abs(empirical_quantiles(x, grid)
                                               - oracle_quantiles(x, grid.points)))))
    dt = time.perf_counter() - t0
    record(1, worst <= 1e-12 and dt < 5, f"max abs error {worst:.2e}, {dt:.2f} s")


MIXTURE_COHORT = {
    "0": [{"family": "normal", "mu": 0.0, "sigma": 1.0},
          {"family": "lognormal", "mu": 0.0, "sigma": 0.5}],
    "1": [{"family": "mixture", "weight": 0.4, "means": [-1.0, 1.5], "sigmas": [0.6, 0.8]},
          {"family": "lognormal", "mu": 0.5, "sigma": 0.3}],
}


def _reduce(Q, grid, K0=500):
    d = build_dictionary(grid, K0=K0, J=10.0, seed=0)
    sel = select_union_basis(Q, d)
    red = rank_and_reduce(Q, d, sel)
    BASES.append(finalize_basis(d.values[red.order], grid, red.order))
    return red


def test_criterion_2_near_lossless_reduction():
    t0 = time.perf_counter()
    spec = CohortSpec(n_per_class=(50, 50), m_range=(200, 2000), families=MIXTURE_COHORT, seed=1)
    Q, grid = quantile_matrix(generate_cohort(spec), "lesion", 128)
    mixed = _reduce(Q, grid)
    rng = np.random.default_rng(3)
    mu, sd = rng.normal(size=100), rng.uniform(0.2, 3.0, 100)
    Qg = mu[:, None] + sd[:, None] * norm_ppf(grid.points)[None, :]
    gauss = _reduce(Qg, grid)
    dt = time.perf_counter() - t0
    K, Kg = len(mixed.order), len(gauss.order)
    ok = (mixed.reached and mixed.rho0_path[-1] >= 0.999 and K <= 20
          and gauss.reached and Kg <= 3 and dt < 300)
    record(2, ok, f"mixture rho0 {mixed.rho0_path[-1]:.5f} with K={K}; "
                  f"Gaussian rho0 {gauss.rho0_path[-1]:.6f} with K={Kg}; {dt:.1f} s")


def test_criterion_5_heterogeneity():
    t0 = time.perf_counter()
    wins, lines = 0, []
    for seed in range(10):
        spec = CohortSpec(n_per_class=(60, 60), m_range=(200, 2000),
                          families=equal_mean_families(0.9), equal_mean=True, seed=seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            table, bases = feature_table(generate_cohort(spec), K0=500, dict_seed=0,
                                         min_components=10, max_components=20)
            BASES.extend(bases.values())
            accs = []
            for fs, k in (("Mean", None), ("Q", 10)):
                design, y = assemble_features(table, parse_feature_set(fs), k_use=k)
                accs.append(loocv_evaluate(design.values, y, design.penalty_mask,
                                           seed=seed).metrics.accuracy)
        wins += accs[0] <= 0.65 and accs[1] >= 0.90
        lines.append(f"{accs[0]:.2f}/{accs[1]:.2f}")
    dt = time.perf_counter() - t0
    record(5, wins >= 9 and dt < 600,
           f"{wins}/10 seeds with Mean <= 0.65 and Q(10) >= 0.90 "
           f"(Mean/Q per seed: {' '.join(lines)}); {dt:.0f} s")


def test_criterion_3_orthonormality():
    rng = np.random.default_rng(8)
    from quantlet_dda.quantile import ProbabilityGrid
    grid = ProbabilityGrid.from_delta(128, 1 / 201)
    extra = [finalize_basis(rng.normal(size=(k, 128)).cumsum(1), grid) for k in (1, 5, 20)]
    bases = BASES + extra
    worst = max(float(np.max(np.abs(b.gram() - np.eye(b.K)))) for b in bases)
    record(3, worst <= 1e-8, f"max |<psi_k, psi_l> - delta_kl| = {worst:.2e} over {len(bases)} bases")


def test_criterion_4_solvers():
    rng = np.random.default_rng(4)
    X, y = logistic_data(rng, 50, 5, 0.7)
    fit = logistic_l1_fit(X, y, 0.0)
    err_a = float(np.max(np.abs(np.r_[fit.intercept, fit.coef] - newton_mle(X, y))))
    worst_b = 0.0
    for i in range(20):
        r = np.random.default_rng(500 + i)
        Xi, yi = logistic_data(r, int(r.integers(40, 100)), int(r.integers(2, 10)))
        lam = logistic_lambda_max(Xi, yi) * r.uniform(0.05, 0.9)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SeparationWarning)
            f = logistic_l1_fit(Xi, yi, lam)
        worst_b = max(worst_b, logistic_kkt_oracle(Xi, yi, f.intercept, f.coef, lam,
                                                   np.ones(Xi.shape[1], bool)))
    worst_c = 0.0
    for i in range(50):
        r = np.random.default_rng(900 + i)
        x = r.normal(size=30) * r.uniform(0.1, 5)
        yy = r.uniform(-2, 2) * x + r.normal(size=30)
        lam = r.uniform(0, 1.5)
        c = np.mean((x - x.mean()) * (yy - yy.mean())) / x.std()
        expected = np.sign(c) * max(abs(c) - lam, 0.0) / x.std()
        worst_c = max(worst_c, abs(lasso_fit(x[:, None], yy, lam).coef[0] - expected))
    ok = err_a <= 1e-4 and worst_b <= 1e-5 and worst_c <= 1e-10
    record(4, ok, f"(a) Newton gap {err_a:.1e}; (b) worst KKT {worst_b:.1e} over 20; "
                  f"(c) soft-threshold gap {worst_c:.1e}")


def test_criterion_6_metric_fidelity():
    t = np.r_[np.ones(91), np.zeros(97)].astype(int)
    p = np.r_[np.ones(80), np.zeros(11), np.ones(2), np.zeros(95)].astype(int)
    m = confusion_metrics(t, p)
    got = [round(v, 2) for v in (m.sensitivity, m.specificity, m.f1, m.accuracy)]
    record(6, got == [0.88, 0.98, 0.92, 0.93], f"sens/spec/f1/acc = {got}")


def test_criterion_7_epm():
    rng = np.random.default_rng(7)
    t = np.array([0.0, 20.0, 45.0, 90.0, 180.0])
    base = 100 + 3 * t - 0.02 * t ** 2 + 0.025 * np.maximum(t - 45, 0) ** 2
    roi = base + 0.1 * rng.normal(size=(10, 5))
    vol = PhaseSeriesVolume(np.arange(10), np.zeros((10, 3)), roi, ["normal_roi"] * 10, t)
    curve = fit_normal_curve(vol)
    t_obs = np.tile(t, 10)
    left, right, _ = constrained_ls_oracle(t_obs, roi.ravel(), curve.knot)
    coef_gap = max(np.max(np.abs(curve.left - left)), np.max(np.abs(curve.right - right)))
    c = curve(t)
    d = np.array([0.0, 3.0, -0.75, 12.5])
    probe = PhaseSeriesVolume(np.arange(4), np.zeros((4, 3)), c[None, :] + d[:, None],
                              ["lesion"] * 4, t)
    epm = compute_epm(probe, curve)
    zero_ok = epm[0] <= 1e-12
    offset_gap = max(abs(epm[i] - abs(d[i])) for i in range(1, 4))
    ok = zero_ok and offset_gap <= 1e-12 and coef_gap <= 1e-8
    record(7, ok, f"zero-deviation EPM {epm[0]:.1e}; offset gap {offset_gap:.1e}; "
                  f"oracle coefficient gap {coef_gap:.1e}")


def test_criterion_8_determinism(tmp_path):
    cfg = json.loads(BUNDLED_CONFIG.read_text())
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    outs = []
    for name, jobs in (("a", 1), ("b", 1), ("c", 2)):
        code = cli.main(["all", "-c", str(path), "-o", str(tmp_path / name), "-j", str(jobs)])
        assert code == 0
        outs.append((tmp_path / name / "metrics.csv").read_bytes())
    same = outs[0] == outs[1] == outs[2]
    record(8, same, "metrics.csv byte-identical across two serial runs and one 2-job run"
           if same else "metrics.csv differs between runs")
