import json

import numpy as np
import pandas as pd
import pytest

from quantlet_dda.exceptions import SchemaError
from quantlet_dda.io import (ArtifactWriter, read_coefficients, read_covariates, read_pixels,
                             read_quantiles, read_volume, write_coefficients, write_pixels,
                             write_quantiles, write_volume)
from quantlet_dda.epm import PhaseSeriesVolume
from quantlet_dda.quantile import standard_grid


def test_pixels_quantiles_coefficients_roundtrip(tmp_path, rng):
    w = ArtifactWriter()
    pixels = {"lesion": {"a": rng.normal(size=30), "b": rng.normal(size=50) * 1e-7},
              "peri": {"a": rng.normal(size=25)}}
    write_pixels(w, tmp_path / "px.csv", pixels)
    back = read_pixels(tmp_path / "px.csv")
    assert all(np.array_equal(back[r][s], pixels[r][s]) for r in pixels for s in pixels[r])
    grid = standard_grid([30, 50], 16)
    Q = rng.normal(size=(2, 16))
    write_quantiles(w, tmp_path / "q.csv", "lesion", ["a", "b"], Q, grid)
    region, ids, Q2, g2 = read_quantiles(tmp_path / "q.csv")
    assert (region, ids, g2) == ("lesion", ["a", "b"], grid) and np.array_equal(Q, Q2)
    C = rng.normal(size=(2, 3))
    write_coefficients(w, tmp_path / "c.csv", "lesion", ["a", "b"], C)
    assert np.array_equal(read_coefficients(tmp_path / "c.csv")[2], C)


def test_volume_roundtrip_with_times(tmp_path, rng):
    vol = PhaseSeriesVolume([5, 7, 9], rng.integers(0, 5, (3, 3)), rng.normal(size=(3, 4)),
                            ["lesion", "normal_roi", "peri"], [0.0, 30.0, 70.0, 200.0])
    write_volume(ArtifactWriter(), tmp_path / "v.csv", vol, with_times=True)
    back = read_volume(tmp_path / "v.csv")
    assert np.array_equal(back.intensities, vol.intensities)
    assert np.array_equal(back.phase_times, vol.phase_times)
    assert list(back.region) == list(vol.region)


def test_rollback_restores_previous_contents(tmp_path):
    old = tmp_path / "keep.txt"
    old.write_text("original")
    w = ArtifactWriter()
    w.write_text(old, "replaced")
    w.write_json(tmp_path / "new.json", {"a": 1})
    w.rollback()
    assert old.read_text() == "original"
    assert not (tmp_path / "new.json").exists()


def test_covariate_schema(tmp_path):
    p = tmp_path / "cov.csv"
    pd.DataFrame({"sample_id": ["x", "y"], "label": [0, 1], "demo_1": [1.0, 2.0]}).to_csv(p, index=False)
    t = read_covariates(p)
    assert list(t.index) == ["x", "y"] and list(t.columns) == ["label", "demo_1"]
    pd.DataFrame({"sample_id": ["x"], "label": [0], "age": [3]}).to_csv(p, index=False)
    with pytest.raises(SchemaError):
        read_covariates(p)
    pd.DataFrame({"sample_id": ["x"], "demo_1": [3]}).to_csv(p, index=False)
    with pytest.raises(SchemaError):
        read_covariates(p)
