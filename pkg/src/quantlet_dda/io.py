"""Readers and writers for the pipeline's CSV and JSON files."""
import csv
import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from .epm import PhaseSeriesVolume
from .exceptions import SchemaError
from .quantile import ProbabilityGrid


# floats go out as repr and come back with round_trip parsing: CSV hops are lossless
def _fmt(v):
    return repr(float(v))


class ArtifactWriter:
    """Atomic file writes (temp file + rename) with a record of what was written.

    ``rollback`` removes files this writer created and restores the prior
    contents of files it overwrote.
    """

    def __init__(self):
        self.written = []
        self._previous = {}

    def write_text(self, path, text):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path not in self._previous:
            self._previous[path] = path.read_bytes() if path.exists() else None
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written.append(path)
        return path

    def write_json(self, path, obj):
        return self.write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")

    def write_rows(self, path, header, rows):
        lines = [",".join(header)]
        lines += [",".join(str(v) for v in row) for row in rows]
        return self.write_text(path, "\n".join(lines) + "\n")

    def rollback(self):
        for p, old in self._previous.items():
            if old is not None:
                p.write_bytes(old)
            else:
                try:
                    p.unlink()
                except FileNotFoundError:
                    pass
        self.written = []
        self._previous = {}


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(df, cols, what):
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise SchemaError(f"{what} is missing columns {missing}")


# ---------------------------------------------------------------- EPM volumes

def read_volume(path):
    """Voxel CSV ``voxel_id,x,y,z,region,phase_0..phase_{P-1}``.

    An optional first line ``# phase_times=t0,t1,...`` sets the phase
    coordinates.
    """
    phase_times = None
    with open(path) as fh:
        first = fh.readline()
    skip = 0
    if first.startswith("#"):
        skip = 1
        key, _, val = first[1:].partition("=")
        if key.strip() == "phase_times":
            phase_times = [float(v) for v in val.split(",")]
    df = pd.read_csv(path, skiprows=skip, float_precision="round_trip")
    _require(df, ["voxel_id", "x", "y", "z", "region"], f"volume {path}")
    phase_cols = sorted((c for c in df.columns if c.startswith("phase_")),
                        key=lambda c: int(c.split("_")[1]))
    if len(phase_cols) < 3:
        raise SchemaError(f"volume {path} has {len(phase_cols)} phase columns, need >= 3")
    return PhaseSeriesVolume(df["voxel_id"].to_numpy(), df[["x", "y", "z"]].to_numpy(),
                             df[phase_cols].to_numpy(dtype=float),
                             df["region"].astype(str).to_numpy(), phase_times)


def write_volume(writer, path, volume, with_times=False):
    P = volume.n_phases
    header = ["voxel_id", "x", "y", "z", "region"] + [f"phase_{t}" for t in range(P)]
    rows = [[int(v), *map(int, c), r, *map(_fmt, row)]
            for v, c, r, row in zip(volume.voxel_id, volume.coords, volume.region,
                                    volume.intensities)]
    lines = [",".join(header)] + [",".join(map(str, r)) for r in rows]
    if with_times:
        lines.insert(0, "# phase_times=" + ",".join(map(_fmt, volume.phase_times)))
    return writer.write_text(path, "\n".join(lines) + "\n")


def write_epm(writer, path, epm):
    return writer.write_rows(path, ["voxel_id", "epm"],
                             [[k, _fmt(v)] for k, v in sorted(epm.items())])


# ---------------------------------------------------------------- pixels

def read_pixels(path):
    """Pixel CSV ``sample_id,region,value`` -> ``{region: {sample_id: array}}``.

    Samples keep their first-appearance order.
    """
    df = pd.read_csv(path, dtype={"sample_id": str, "region": str}, float_precision="round_trip")
    _require(df, ["sample_id", "region", "value"], f"pixel table {path}")
    if not np.all(np.isfinite(df["value"].to_numpy(dtype=float))):
        raise SchemaError(f"pixel table {path} has non-finite values")
    out = {}
    for (region, sid), grp in df.groupby(["region", "sample_id"], sort=False):
        out.setdefault(region, {})[sid] = grp["value"].to_numpy(dtype=float)
    return out


def write_pixels(writer, path, pixels):
    lines = ["sample_id,region,value"]
    for region, samples in pixels.items():
        for sid, vals in samples.items():
            lines.extend(f"{sid},{region},{_fmt(v)}" for v in vals)
    return writer.write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------- quantiles / coefficients

def write_quantiles(writer, path, region, sample_ids, Q, grid):
    header = ["sample_id", "region"] + [f"p_{j + 1}" for j in range(grid.G)]
    rows = [[sid, region, *map(_fmt, q)] for sid, q in zip(sample_ids, Q)]
    writer.write_rows(path, header, rows)
    writer.write_json(grid_sidecar(path), grid.to_dict())


def grid_sidecar(path):
    path = Path(path)
    return path.with_name(path.stem + ".grid.json")


def read_quantiles(path):
    """Returns ``(region, sample_ids, Q, grid)`` for a single-region quantile CSV."""
    df = pd.read_csv(path, dtype={"sample_id": str, "region": str}, float_precision="round_trip")
    _require(df, ["sample_id", "region"], f"quantile table {path}")
    with open(grid_sidecar(path)) as fh:
        grid = ProbabilityGrid.from_dict(json.load(fh))
    cols = [f"p_{j + 1}" for j in range(grid.G)]
    _require(df, cols, f"quantile table {path}")
    regions = df["region"].unique()
    if regions.size != 1:
        raise SchemaError(f"quantile table {path} mixes regions {list(regions)}")
    return str(regions[0]), df["sample_id"].tolist(), df[cols].to_numpy(dtype=float), grid


def write_coefficients(writer, path, region, sample_ids, C):
    header = ["sample_id", "region"] + [f"q_{k + 1}" for k in range(C.shape[1])]
    return writer.write_rows(path, header,
                             [[sid, region, *map(_fmt, c)] for sid, c in zip(sample_ids, C)])


def read_coefficients(path):
    df = pd.read_csv(path, dtype={"sample_id": str, "region": str}, float_precision="round_trip")
    _require(df, ["sample_id", "region"], f"coefficient table {path}")
    cols = [c for c in df.columns if c.startswith("q_")]
    return str(df["region"].iloc[0]), df["sample_id"].tolist(), df[cols].to_numpy(dtype=float)


# ---------------------------------------------------------------- tables

def read_covariates(path):
    """Covariate CSV ``sample_id,label,demo_*,rad_*`` indexed by sample id."""
    df = pd.read_csv(path, dtype={"sample_id": str}, float_precision="round_trip")
    _require(df, ["sample_id", "label"], f"covariate table {path}")
    extra = [c for c in df.columns
             if c not in ("sample_id", "label") and not c.startswith(("demo_", "rad_"))]
    if extra:
        raise SchemaError(f"covariate table {path} has unexpected columns {extra}")
    return df.set_index("sample_id")


def write_table(writer, path, table):
    header = [table.index.name or "sample_id"] + list(table.columns)
    rows = []
    for sid, row in zip(table.index, table.itertuples(index=False)):
        rows.append([sid] + ["" if pd.isna(v) else (int(v) if c == "label" else _fmt(v))
                             for c, v in zip(table.columns, row)])
    return writer.write_rows(path, header, rows)


def read_table(path):
    df = pd.read_csv(path, dtype={"sample_id": str}, float_precision="round_trip")
    _require(df, ["sample_id", "label"], f"feature table {path}")
    return df.set_index("sample_id")
