"""Declarative experiment configuration (JSON) and field-spec parsing."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .fields import (GridField, SpaceTimeField, absolute, as_drift,
                     constant_field, make_example, mollify, sample_to_grid,
                     squared)
from .heatkernel import QuadraturePolicy
from .pde import GridSpec

__all__ = ["ExperimentConfig", "load_config", "build_field"]


def _grid_field_from_csv(path: str, dim: int, horizon: float) -> SpaceTimeField:
    """Lattice samples from CSV rows t, x1..xd, value[, value2..]."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            rows.append([float(v) for v in row])
    if not rows:
        raise ConfigurationError(f"empty lattice file {path}")
    arr = np.asarray(rows)
    ts = np.unique(arr[:, 0])
    xs = np.unique(arr[:, 1])
    range_dim = arr.shape[1] - 1 - dim
    if range_dim < 1:
        raise ConfigurationError(f"lattice file {path} has too few columns for d={dim}")
    nt, nx = len(ts), len(xs)
    if len(arr) != nt * nx ** dim:
        raise ConfigurationError(f"lattice file {path} is not a full grid")
    box = float(xs.max())
    shape = (nt,) + (nx,) * dim + ((range_dim,) if range_dim > 1 else ())
    # rows are sorted lexicographically by (t, x1, ..., xd)
    order = np.lexsort(tuple(arr[:, k] for k in range(dim, 0, -1)) + (arr[:, 0],))
    vals = arr[order, dim + 1:]
    if range_dim == 1:
        vals = vals[:, 0]
    grid = GridField(dim, range_dim, float(ts.max()), box, vals.reshape(shape))
    return grid.as_field({"family": "grid", "path": path})


def build_field(spec, dim: int, horizon: float, name: str = "field",
                others: dict = None) -> SpaceTimeField:
    """Construct a field from its JSON spec (or resolve an alias)."""
    if isinstance(spec, str):
        if others and spec in others:
            return others[spec]
        raise ConfigurationError(f"field {name!r} references unknown field {spec!r}")
    if not isinstance(spec, dict):
        raise ConfigurationError(f"field {name!r} spec must be an object or alias")
    spec = dict(spec)
    family = spec.pop("family", None)
    modifiers = spec.pop("modifiers", [])
    if family == "constant":
        f = constant_field(spec.get("value", 1.0), dim, horizon)
    elif family == "power_product":
        f = make_example("power_product", spec["alphas"], dim, horizon)
    elif family == "ball_lattice":
        f = make_example("ball_lattice", spec["alpha"], dim, horizon)
    elif family == "time_singular":
        f = make_example("time_singular", spec["alpha"], dim, horizon)
    elif family == "grid":
        f = _grid_field_from_csv(spec["path"], dim, horizon)
    else:
        raise ConfigurationError(f"field {name!r}: unknown family {family!r}")
    for mod in modifiers:
        op = mod.get("op") if isinstance(mod, dict) else mod
        if op == "mollify":
            f = mollify(f, int(mod.get("n", 6)))
        elif op == "squared":
            f = squared(f)
        elif op == "absolute":
            f = absolute(f)
        elif op == "as_drift":
            f = as_drift(f, int(mod.get("axis", 0)) if isinstance(mod, dict) else 0)
        elif op == "to_grid":
            g = sample_to_grid(f, float(mod.get("box", 2.0)),
                               int(mod.get("time_steps", 64)),
                               int(mod.get("space_steps", 128)))
            f = g.as_field({**f.metadata, "sampled": True})
        else:
            raise ConfigurationError(f"field {name!r}: unknown modifier {op!r}")
    if f.dim != dim:
        raise ConfigurationError(f"field {name!r} has dimension {f.dim}, "
                                 f"config declares {dim}")
    return f


@dataclass
class ExperimentConfig:
    dim: int
    horizon: float
    seed: int
    fields: dict                       # name -> SpaceTimeField
    quadrature: QuadraturePolicy
    grid: GridSpec
    mollification_ladder: list
    monte_carlo: dict                  # paths, steps, t_check
    maximal: dict                      # R, radii_count
    tolerances: dict
    stages: list
    raw: dict = dc_field(default_factory=dict)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    for key in ("dim", "horizon", "seed"):
        if key not in raw:
            raise ConfigurationError(f"config missing required key {key!r}")
    dim = int(raw["dim"])
    horizon = float(raw["horizon"])
    if dim not in (1, 2, 3):
        raise ConfigurationError("dim must be 1, 2 or 3")
    if horizon <= 0:
        raise ConfigurationError("horizon must be positive")

    fields = {}
    specs = raw.get("fields", {})
    # build non-alias specs first so aliases can resolve
    for name, spec in specs.items():
        if not isinstance(spec, str):
            fields[name] = build_field(spec, dim, horizon, name)
    for name, spec in specs.items():
        if isinstance(spec, str):
            fields[name] = build_field(spec, dim, horizon, name, fields)

    q = raw.get("quadrature", {})
    quad = QuadraturePolicy(
        time_levels=int(q.get("time_levels", 20)),
        space_points_per_axis=int(q.get("space_points_per_axis", 32)),
        rel_tol=float(q.get("rel_tol", 1e-3)))
    g = raw.get("grid", {})
    grid = GridSpec(box=float(g.get("box", 1.0)),
                    time_steps=int(g.get("time_steps", 64)),
                    space_steps=int(g.get("space_steps", 64)))
    mc = dict(raw.get("monte_carlo", {}))
    mc.setdefault("paths", 10000)
    mc.setdefault("steps", 128)
    mx = dict(raw.get("maximal", {}))
    mx.setdefault("R", 0.5)
    mx.setdefault("radii_count", 32)
    return ExperimentConfig(
        dim=dim, horizon=horizon, seed=int(raw["seed"]), fields=fields,
        quadrature=quad, grid=grid,
        mollification_ladder=list(raw.get("mollification_ladder", [5, 6, 7, 8])),
        monte_carlo=mc, maximal=mx,
        tolerances=dict(raw.get("tolerances", {})),
        stages=list(raw.get("stages", ["certify"])), raw=raw)
