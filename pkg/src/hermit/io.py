"""CSV/JSON persistence for datasets, models and reports."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .expfamily import Family, Kind
from .model import Dataset, MixtureModel


def _family_to_json(f: Family):
    if f.kind is Kind.GAUSSIAN and f.dispersion != 1.0:
        return {"family": f.kind.value, "sigma": float(np.sqrt(f.dispersion))}
    return f.kind.value


def _family_from_json(obj) -> Family:
    if isinstance(obj, str):
        return Family.parse(obj)
    fam = Family.parse(obj["family"])
    if "sigma" in obj:
        if fam.kind is not Kind.GAUSSIAN:
            raise ValueError("sigma is only allowed for gaussian targets")
        fam = Family.gaussian(float(obj["sigma"]))
    return fam


def families_from_json(items):
    return [_family_from_json(o) for o in items]


def read_sidecar(path) -> dict:
    with open(path) as fh:
        meta = json.load(fh)
    if "families" not in meta:
        raise ValueError(f"{path}: sidecar needs a 'families' list")
    return meta


def _parse_cell(s: str) -> float:
    s = s.strip()
    if s == "" or s.lower() == "nan":
        return float("nan")
    return float(s)


def load_dataset(csv_path, sidecar) -> Dataset:
    """Read a dataset from a headed CSV plus a JSON sidecar.

    The sidecar (path or dict) lists ``families`` for the target columns and either
    ``targets`` (column names) or ``n_features``; the remaining columns, in file order,
    are features.  Empty or ``NaN`` target cells are missing.
    """
    meta = read_sidecar(sidecar) if not isinstance(sidecar, dict) else sidecar
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [[_parse_cell(c) for c in row] for row in reader if row]
    table = np.array(rows, dtype=float).reshape(len(rows), len(header))
    if "targets" in meta:
        missing = [t for t in meta["targets"] if t not in header]
        if missing:
            raise ValueError(f"target columns not found in CSV: {missing}")
        tcols = [header.index(t) for t in meta["targets"]]
    else:
        nf = int(meta["n_features"])
        tcols = list(range(nf, len(header)))
    if "features" in meta:
        fcols = [header.index(f) for f in meta["features"]]
    else:
        fcols = [i for i in range(len(header)) if i not in tcols]
    families = families_from_json(meta["families"])
    if len(families) != len(tcols):
        raise ValueError(f"{len(families)} families for {len(tcols)} target columns")
    return Dataset(table[:, fcols], table[:, tcols], families)


def save_dataset(data: Dataset, csv_path, sidecar_path=None, feature_names=None, target_names=None):
    """Write a dataset as CSV (missing targets left empty) plus its sidecar JSON."""
    fnames = feature_names or [f"x{i}" for i in range(data.d)]
    tnames = target_names or [f"y{j}" for j in range(data.m)]
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(fnames) + list(tnames))
        for i in range(data.n):
            ys = ["" if not data.observed[i, j] else repr(float(data.Y[i, j])) for j in range(data.m)]
            w.writerow([repr(float(v)) for v in data.X[i]] + ys)
    meta = {"features": list(fnames), "targets": list(tnames),
            "families": [_family_to_json(f) for f in data.tasks]}
    if sidecar_path is not None:
        write_json(meta, sidecar_path)
    return meta


def model_to_dict(model: MixtureModel, gate=None) -> dict:
    out = {"beta": model.beta.tolist(), "pi": model.pi.tolist(),
           "families": [_family_to_json(f) for f in model.families], "gamma": model.gamma}
    if gate is not None:
        out["alpha"] = np.asarray(getattr(gate, "alpha", gate)).tolist()
    return out


def model_from_dict(d: dict):
    """Returns ``(model, alpha_or_None)``."""
    model = MixtureModel(np.array(d["beta"], dtype=float), np.array(d["pi"], dtype=float),
                         families_from_json(d["families"]), gamma=float(d.get("gamma", 1.0)))
    alpha = np.array(d["alpha"], dtype=float) if d.get("alpha") is not None else None
    return model, alpha


def save_model(model: MixtureModel, path, gate=None):
    write_json(model_to_dict(model, gate), path)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_default)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([v.item() if isinstance(v, np.generic) else v for v in r])


def read_matrix_csv(path) -> np.ndarray:
    """Numeric CSV with a header row; empty cells become NaN."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [[_parse_cell(c) for c in row] for row in reader if row]
    return np.array(rows, dtype=float)
