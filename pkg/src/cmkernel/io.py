"""On-disk formats of the pipeline stages.

Every writer goes through :func:`atomic_write`: the content lands in a
temporary file in the target directory and is renamed over the destination
only once it is complete. Floats are written with 17 significant digits
(CSV) or shortest round-trip repr (JSON), so read-back is exact.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .dynamics import TrajectoryDataset
from .errors import InvalidArgument
from .greedy import GreedySelection
from .kernels import KernelSpec
from .regression import Surrogate

FLOAT_FMT = "%.17g"


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_text(obj):
    return json.dumps(obj, indent=1, allow_nan=True) + "\n"


def write_json(path, obj):
    atomic_write(path, _json_text(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _csv_text(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(FLOAT_FMT % v for v in row))
    return "\n".join(lines) + "\n"


def _read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        body = fh.read()
    if body.strip():
        data = np.loadtxt(body.splitlines(), delimiter=",", ndmin=2, dtype=float)
    else:
        data = np.zeros((0, len(header)))
    if data.shape[1] != len(header):
        raise InvalidArgument(f"{path}: rows do not match the header")
    return header, data


# -- dataset ---------------------------------------------------------------------

def provenance_path(path):
    return Path(str(path) + ".provenance.json")


def write_dataset(dataset: TrajectoryDataset, path, extra=None):
    """Write the dataset CSV ``t,x1..xd,y1..ym`` and its provenance sidecar."""
    d, m = dataset.d, dataset.m
    header = ["t"] + [f"x{i + 1}" for i in range(d)] + [f"y{j + 1}" for j in range(m)]
    rows = np.column_stack([dataset.times, dataset.x_points, dataset.y_points]) if len(dataset) \
        else np.zeros((0, 1 + d + m))
    atomic_write(path, _csv_text(header, rows))
    prov = dict(dataset.provenance)
    prov["d"], prov["m"] = d, m
    if extra:
        prov.update(extra)
    prov["dataset_sha256"] = sha256_file(path)
    write_json(provenance_path(path), prov)


def read_dataset(path) -> TrajectoryDataset:
    header, data = _read_csv(path)
    if not header or header[0] != "t":
        raise InvalidArgument(f"{path}: not a dataset file (header must start with 't')")
    d = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("y"))
    if 1 + d + m != len(header):
        raise InvalidArgument(f"{path}: unexpected columns {header}")
    prov_file = provenance_path(path)
    prov = read_json(prov_file) if prov_file.exists() else {}
    box = np.asarray(prov.get("domain_box", [[-np.inf, np.inf]] * d), dtype=float).reshape(d, 2)
    return TrajectoryDataset(times=data[:, 0].copy(), x_points=data[:, 1:1 + d].copy(),
                             y_points=data[:, 1 + d:].copy(), domain_box=box, provenance=prov)


# -- greedy selection ------------------------------------------------------------------

def write_selection(sel: GreedySelection, path, source_hash, candidate_rows):
    """``candidate_rows[k]`` is the dataset row of the k-th candidate."""
    rows = [int(candidate_rows[i]) for i in sel.selected_indices]
    obj = {
        "source_sha256": source_hash,
        "kernel": sel.spec.to_dict(),
        "eps_tol": sel.eps_tol,
        "tol_mode": sel.tol_mode,
        "stop_reason": sel.stop_reason,
        "final_power": sel.final_power,
        "selected_count": len(sel),
        "selected_indices": rows,
        "selected_points": [[float(v) for v in p] for p in sel.centers],
        "power_history": sel.power_history,
    }
    obj.update(sel.extra)
    write_json(path, obj)


def read_selection(path) -> dict:
    obj = read_json(path)
    for key in ("selected_indices", "kernel", "source_sha256"):
        if key not in obj:
            raise InvalidArgument(f"{path}: missing '{key}'")
    return obj


# -- model -----------------------------------------------------------------------

def model_to_dict(s: Surrogate, selection_hash=None, extra=None):
    obj = {
        "kernel": s.spec.to_dict(),
        "d": s.d,
        "m": s.m,
        "centers_with_origin": s.centers_with_origin.tolist(),
        "alpha": s.alpha.tolist(),
        "beta": s.beta.tolist(),
        "lambda": s.lam,
        "weight_mode": s.weight_mode,
        "selection_sha256": selection_hash,
        "fit_report": s.fit_report,
    }
    if extra:
        obj.update(extra)
    return obj


def write_model(s: Surrogate, path, selection_hash=None, extra=None):
    write_json(path, model_to_dict(s, selection_hash, extra))


def read_model(path) -> Surrogate:
    obj = read_json(path)
    d, m = int(obj["d"]), int(obj["m"])
    return Surrogate(
        spec=KernelSpec.from_dict(obj["kernel"], input_dim=d),
        centers_with_origin=np.asarray(obj["centers_with_origin"], dtype=float).reshape(-1, d),
        alpha=np.asarray(obj["alpha"], dtype=float).reshape(-1, m),
        beta=np.asarray(obj["beta"], dtype=float).reshape(d, m),
        lam=float(obj["lambda"]),
        weight_mode=obj["weight_mode"],
        fit_report=obj.get("fit_report", {}),
    )


# -- evaluation ------------------------------------------------------------------

def write_evaluation(path, points, s_values, h_values, residual_norms):
    points = np.asarray(points, dtype=float)
    s_values = np.asarray(s_values, dtype=float).reshape(len(points), -1)
    h_values = np.asarray(h_values, dtype=float).reshape(len(points), -1)
    d, m = points.shape[1], s_values.shape[1]
    header = ([f"x{i + 1}" for i in range(d)] + [f"s_{j + 1}" for j in range(m)]
              + [f"h_taylor_{j + 1}" for j in range(m)] + ["residual_norm"])
    rows = np.column_stack([points, s_values, h_values, np.asarray(residual_norms, dtype=float)])
    atomic_write(path, _csv_text(header, rows))


def read_evaluation(path):
    """Return ``(header, data)`` of an evaluation CSV."""
    return _read_csv(path)
