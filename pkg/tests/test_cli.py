import csv
import json

import numpy as np
import pytest

from quantlet_dda import cli
from quantlet_dda.epm import PhaseSeriesVolume, compute_epm, fit_normal_curve
from quantlet_dda.exceptions import ConvergenceError
from quantlet_dda.io import ArtifactWriter, read_quantiles, write_volume
from quantlet_dda.pipeline import DEFAULTS, apply_overrides, config_hash, load_config
from quantlet_dda.quantile import empirical_quantiles, standard_grid

SMALL = {
    "paths": {"out_dir": "out"},
    "grid": {"G": {"lesion": 64}},
    "dictionary": {"K0": 40, "seed": 1},
    "quantlet": {"min_components": 4, "max_components": 8},
    "model": {"regions": ["lesion"], "feature_sets": ["D", "Mean", "Q", "Q+R"], "K_use": [3],
              "fit_feature_set": "Q", "fit_K": 3},
    "eval": {"folds": 4, "seed": 0},
    "synth": {"n_per_class": [10, 10], "m_range": [100, 400],
              "families": {"equal_mean": {"a": 0.9}}, "radiomic_effects": [0.5], "seed": 3},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_all_end_to_end(small_config, tmp_path):
    assert cli.main(["all", "-c", str(small_config)]) == 0
    out = tmp_path / "out"
    rows = read_csv(out / "metrics.csv")
    assert rows[0] == ["features", "K", "sens", "spec", "f1", "acc"]
    assert [r[0] for r in rows[1:]] == ["D", "Mean", "Q", "Q+R"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "all"
    assert manifest["config_sha256"] == config_hash(load_config(small_config))
    assert "metrics.csv" in manifest["artifacts"]
    model = json.loads((out / "model.json").read_text())
    assert model["K_use"] == 3 and len(model["theta"]) == len(model["columns"])
    basis = json.loads((out / "basis_lesion.json").read_text())
    psi = np.array(basis["psi"])
    _, _, _, grid = read_quantiles(out / "quantiles_lesion.csv")
    assert np.max(np.abs(grid.inner(psi, psi) - np.eye(len(psi)))) <= 1e-8


def test_quantile_stage_matches_library(small_config, tmp_path):
    assert cli.main(["synth", "-c", str(small_config)]) == 0
    assert cli.main(["quantiles", "-c", str(small_config)]) == 0
    region, ids, Q, grid = read_quantiles(tmp_path / "out" / "quantiles_lesion.csv")
    from quantlet_dda.io import read_pixels
    px = read_pixels(tmp_path / "out" / "pixels.csv")["lesion"]
    ref_grid = standard_grid([px[s].size for s in ids], 64)
    assert grid == ref_grid
    assert np.array_equal(Q[0], empirical_quantiles(px[ids[0]], ref_grid))


def test_out_dir_and_overrides(small_config, tmp_path):
    target = tmp_path / "elsewhere"
    assert cli.main(["synth", "-c", str(small_config), "-o", str(target),
                     "--set", "synth.seed=11"]) == 0
    assert (target / "pixels.csv").exists()
    cfg = apply_overrides(DEFAULTS, ["eval.seed=4", "model.K_use=[5, 6]", "quantlet.denoise=false"])
    assert cfg["eval"]["seed"] == 4 and cfg["model"]["K_use"] == [5, 6]
    assert cfg["quantlet"]["denoise"] is False


def test_epm_stage(tmp_path, rng):
    t = np.array([0.0, 25.0, 60.0, 120.0])
    X = 100 + 0.5 * t - 0.002 * t ** 2 + rng.normal(size=(20, 4))
    region = ["normal_roi"] * 12 + ["lesion"] * 6 + ["background"] * 2
    vol = PhaseSeriesVolume(np.arange(20), rng.integers(0, 9, (20, 3)), X, region, t)
    w = ArtifactWriter()
    write_volume(w, tmp_path / "v1.csv", vol, with_times=True)
    cfg = {"paths": {"out_dir": "out", "volumes": ["v1.csv"]}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert cli.main(["epm", "-c", str(tmp_path / "cfg.json")]) == 0
    rows = read_csv(tmp_path / "out" / "epm_v1.csv")
    assert rows[0] == ["voxel_id", "epm"]
    ref = compute_epm(vol, fit_normal_curve(vol))
    got = {int(a): float(b) for a, b in rows[1:]}
    assert got.keys() == ref.keys()
    assert all(abs(got[k] - ref[k]) <= 1e-12 * max(1, ref[k]) for k in ref)


def test_exit_codes(small_config, tmp_path, monkeypatch, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["all", "-c", str(bad)]) == 2
    assert cli.main(["all", "-c", str(small_config), "--set", "eval.f1_mode=macro"]) == 2
    assert cli.main(["all", "-c", str(tmp_path / "missing.json")]) == 5
    broken = tmp_path / "pix.csv"
    broken.write_text("sample,value\na,1\n")
    assert cli.main(["quantiles", "-c", str(small_config), "--set", f"paths.pixels={broken}"]) == 3

    def boom(*a, **k):
        raise ConvergenceError("stalled")
    monkeypatch.setattr(cli, "run_stage", boom)
    assert cli.main(["all", "-c", str(small_config)]) == 4
    assert "convergence error" in capsys.readouterr().err


def test_failed_stage_rolls_back(small_config, tmp_path):
    # features needs quantiles/basis outputs; nothing partial may remain
    assert cli.main(["synth", "-c", str(small_config)]) == 0
    before = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert cli.main(["features", "-c", str(small_config)]) == 5
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == before


def test_k_use_sweep_rows(tmp_path):
    out = tmp_path / "sweep"
    # a few spare elements: Gram-Schmidt may drop near-collinear Beta rows
    args = ["--set", "quantlet.min_components=36", "--set", "quantlet.max_components=36",
            "--set", 'model.feature_sets=["Mean", "Q", "Q+R"]', "--set", "model.K_use=[10, 20, 30]",
            "--set", "model.fit_K=30", "-o", str(out)]
    assert cli.main(["all", *args]) == 0
    rows = read_csv(out / "metrics.csv")[1:]
    assert [(r[0], r[1]) for r in rows] == [("Mean", ""), ("Q", "10"), ("Q", "20"), ("Q", "30"),
                                           ("Q+R", "10"), ("Q+R", "20"), ("Q+R", "30")]
    assert sorted(p.name for p in (out / "predictions").iterdir()) == [
        "Mean.csv", "Q_10.csv", "Q_20.csv", "Q_30.csv", "Q_R_10.csv", "Q_R_20.csv", "Q_R_30.csv"]


def test_manifest_hashes_reproducible(small_config, tmp_path):
    docs = []
    for name in ("r1", "r2"):
        assert cli.main(["all", "-c", str(small_config), "-o", str(tmp_path / name)]) == 0
        docs.append(json.loads((tmp_path / name / "manifest.json").read_text()))
    assert docs[0]["artifacts"] == docs[1]["artifacts"]
    assert docs[0]["seeds"] == {"dictionary": 1, "eval": 0, "synth": 3}


def test_fold_basis_mode(small_config, tmp_path):
    assert cli.main(["all", "-c", str(small_config)]) == 0
    full = read_csv(tmp_path / "out" / "metrics.csv")
    assert cli.main(["evaluate", "-c", str(small_config), "--set", "eval.basis_mode=fold"]) == 0
    fold = read_csv(tmp_path / "out" / "metrics.csv")
    # basis-free rows are untouched; quantlet rows are re-evaluated
    assert fold[1] == full[1] and fold[2] == full[2]
    assert [r[0] for r in fold[1:]] == ["D", "Mean", "Q", "Q+R"]
    assert cli.main(["evaluate", "-c", str(small_config), "--set", "eval.basis_mode=both"]) == 2
