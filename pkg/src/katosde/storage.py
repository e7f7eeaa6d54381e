"""Flat-binary lattice and ensemble storage with JSON headers, CSV tables.

All JSON is written with sorted keys and no timestamps so that identical
inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "write_json",
    "write_csv",
    "save_lattice",
    "load_lattice",
    "save_solution",
    "load_solution_arrays",
    "save_ensemble",
    "load_ensemble",
]


def _plain(obj):
    """Recursively convert numpy scalars/arrays to builtin types."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(_plain(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def save_lattice(path, values: np.ndarray, meta: dict) -> None:
    """values as flat float64 binary at ``path``; header at ``path + '.json'``."""
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f8")
    arr.tofile(path)
    header = dict(meta)
    header.update({"dtype": "<f8", "shape": list(values.shape),
                   "data_file": path.name})
    write_json(str(path) + ".json", header)


def load_lattice(path):
    path = Path(path)
    with open(str(path) + ".json") as fh:
        header = json.load(fh)
    values = np.fromfile(path, dtype=header["dtype"]).reshape(header["shape"])
    return values, header


def save_solution(path, sol) -> None:
    """Mild solution: u at ``path``, gradient at ``path + '.grad'``."""
    path = Path(path)
    np.ascontiguousarray(sol.grad_u, dtype="<f8").tofile(str(path) + ".grad")
    meta = {
        "kind": "mild_solution",
        "dim": sol.dim, "range_dim": sol.range_dim,
        "horizon": sol.horizon, "box": sol.box,
        "time_steps": sol.time_steps, "space_steps": sol.space_steps,
        "iterations": sol.iterations,
        "grad_file": path.name + ".grad",
        "grad_shape": list(sol.grad_u.shape),
        "budget": sol.budget.to_dict(),
    }
    save_lattice(path, sol.u, meta)


def load_solution_arrays(path):
    u, header = load_lattice(path)
    if header.get("kind") != "mild_solution":
        raise ConfigurationError(f"{path} is not a mild-solution lattice")
    grad = np.fromfile(Path(path).parent / header["grad_file"],
                       dtype="<f8").reshape(header["grad_shape"])
    return u, grad, header


def save_ensemble(path, ens) -> None:
    path = Path(path)
    meta = {
        "kind": "path_ensemble",
        "n_paths": ens.n_paths, "n_steps": ens.n_steps, "dt": ens.dt,
        "start": ens.start.tolist(), "seed": ens.seed,
        "drift_id": ens.drift_id,
        "has_increments": ens.increments is not None,
    }
    if ens.increments is not None:
        np.ascontiguousarray(ens.increments, dtype="<f8").tofile(
            str(path) + ".inc")
        meta["increments_file"] = path.name + ".inc"
        meta["increments_shape"] = list(ens.increments.shape)
    save_lattice(path, ens.states, meta)


def load_ensemble(path):
    from .sde import PathEnsemble
    states, header = load_lattice(path)
    if header.get("kind") != "path_ensemble":
        raise ConfigurationError(f"{path} is not a path-ensemble file")
    incs = None
    if header.get("has_increments"):
        incs = np.fromfile(Path(path).parent / header["increments_file"],
                           dtype="<f8").reshape(header["increments_shape"])
    return PathEnsemble(n_paths=header["n_paths"], n_steps=header["n_steps"],
                        dt=header["dt"], start=np.asarray(header["start"]),
                        seed=header["seed"], drift_id=header["drift_id"],
                        states=states, increments=incs)
