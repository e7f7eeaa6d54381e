"""Euler-Maruyama simulation with singular (capped) drift.

Noise is counter-based: every path owns a Philox stream keyed by (seed,
path index), so any subset of paths is reproducible independently of chunking
or execution order.  Coupling runs two drifts on identical increments and
tracks the running maximum of the squared separation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, NumericError, ValidationError
from .fields import DEFAULT_CAP_EPS, SpaceTimeField, cap_values

__all__ = [
    "PathEnsemble",
    "simulate",
    "coupled_pair",
    "density_envelope_check",
    "krylov_functional_convergence",
]


def _path_normals(seed: int, path: int, shape) -> np.ndarray:
    """Standard normals from the path's own counter-based stream."""
    bitgen = np.random.Philox(key=np.uint64(seed) + (np.uint64(path) << np.uint64(32)))
    return np.random.Generator(bitgen).standard_normal(shape)


def _drift_eval(b: SpaceTimeField, t: float, x: np.ndarray, cap: float) -> np.ndarray:
    vals = b(t, x)
    if vals.ndim == 1:
        vals = vals[:, None]
    return cap_values(vals, cap)


@dataclass
class PathEnsemble:
    n_paths: int
    n_steps: int
    dt: float
    start: np.ndarray
    seed: int
    drift_id: str
    states: np.ndarray          # (n_paths, n_steps + 1, d)
    increments: np.ndarray      # (n_paths, n_steps, d) or None

    @property
    def dim(self) -> int:
        return self.states.shape[-1]

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


def simulate(b: SpaceTimeField, x0, T: float, n_steps: int, n_paths: int,
             seed: int, cap_eps: float = DEFAULT_CAP_EPS,
             store_increments: bool = True, chunk: int = 4096) -> PathEnsemble:
    """Euler-Maruyama paths of dX = b(t, X) dt + dW from x0."""
    if T > b.horizon + 1e-12:
        raise ValidationError("simulation horizon exceeds the drift's horizon")
    if n_steps < 64:
        raise ValidationError("need at least 64 time steps")
    d = b.dim
    x0 = np.asarray(x0, dtype=float).reshape(d)
    dt = T / n_steps
    sq = math.sqrt(dt)
    cap = 1.0 / cap_eps
    states = np.empty((n_paths, n_steps + 1, d))
    incs = np.empty((n_paths, n_steps, d)) if store_increments else None
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        m = hi - lo
        dW = np.empty((m, n_steps, d))
        for j in range(m):
            dW[j] = sq * _path_normals(seed, lo + j, (n_steps, d))
        X = np.tile(x0, (m, 1))
        states[lo:hi, 0] = X
        for k in range(n_steps):
            X = X + dW[:, k] + dt * _drift_eval(b, k * dt, X, cap)
            if not np.all(np.isfinite(X)):
                bad = int(np.argwhere(~np.isfinite(X))[0, 0])
                raise NumericError("path state overflowed",
                                   t=k * dt, x=f"path {lo + bad}, step {k}")
            states[lo:hi, k + 1] = X
        if store_increments:
            incs[lo:hi] = dW
    return PathEnsemble(n_paths=n_paths, n_steps=n_steps, dt=dt, start=x0,
                        seed=seed, drift_id=b.metadata.get("drift_id",
                                                           str(b.metadata)),
                        states=states, increments=incs)


def coupled_pair(b1: SpaceTimeField, b2: SpaceTimeField, x0, T: float,
                 n_steps: int, n_paths: int, seed: int,
                 cap_eps: float = DEFAULT_CAP_EPS, chunk: int = 4096) -> dict:
    """Two Euler recursions on identical noise; E[sup_t |X - Y|^2] estimate."""
    if b1.dim != b2.dim:
        raise ValidationError("coupled drifts must share the dimension")
    d = b1.dim
    x0 = np.asarray(x0, dtype=float).reshape(d)
    dt = T / n_steps
    sq = math.sqrt(dt)
    cap = 1.0 / cap_eps
    sups = np.empty(n_paths)
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        m = hi - lo
        X = np.tile(x0, (m, 1))
        Y = X.copy()
        run = np.zeros(m)
        dW_all = np.empty((m, n_steps, d))
        for j in range(m):
            dW_all[j] = sq * _path_normals(seed, lo + j, (n_steps, d))
        for k in range(n_steps):
            t = k * dt
            X = X + dW_all[:, k] + dt * _drift_eval(b1, t, X, cap)
            Y = Y + dW_all[:, k] + dt * _drift_eval(b2, t, Y, cap)
            np.maximum(run, np.sum((X - Y) ** 2, axis=1), out=run)
        sups[lo:hi] = run
    mean = float(np.mean(sups))
    stderr = float(np.std(sups, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return {"mean": mean, "stderr": stderr, "n_paths": n_paths}


def density_envelope_check(ensemble: PathEnsemble, t_check: float,
                           m7_grid=(0.5, 0.8), m6: float = None,
                           m7: float = None, bins: int = 40,
                           box_sigmas: float = 6.0,
                           max_violation_fraction: float = 0.01) -> dict:
    """Histogram of X_{t_check} against the Gaussian envelope
    M6 t^{-d/2} exp(-M7 |x - x0|^2 / (2 t)).

    With (m6, m7) given, checks domination; otherwise fits the smallest M6
    for each M7 on the grid.  A bin violates when its density estimate
    exceeds the envelope by more than two standard errors.
    """
    d = ensemble.dim
    if ensemble.n_paths < 10 ** 4:
        raise InsufficientDataError("need at least 1e4 paths for a histogram")
    k = int(round(t_check / ensemble.dt))
    if not 0 < k <= ensemble.n_steps:
        raise ValidationError("t_check outside the simulated horizon")
    t = k * ensemble.dt
    X = ensemble.states[:, k, :] - ensemble.start
    half = box_sigmas * math.sqrt(t)
    edges = [np.linspace(-half, half, bins + 1)] * d
    counts, _ = np.histogramdd(X, bins=edges)
    cellvol = (2.0 * half / bins) ** d
    N = ensemble.n_paths
    dens = counts / (N * cellvol)
    stderr = np.sqrt(counts) / (N * cellvol)
    centers = np.linspace(-half + half / bins, half - half / bins, bins)
    mesh = np.stack(np.meshgrid(*([centers] * d), indexing="ij"), axis=-1)
    r2 = np.sum(mesh * mesh, axis=-1)

    def check(M6, M7):
        env = M6 * t ** (-d / 2.0) * np.exp(-M7 * r2 / (2.0 * t))
        viol = dens > env + 2.0 * stderr
        return float(np.mean(viol)), int(np.sum(viol))

    if m6 is not None and m7 is not None:
        frac, n_viol = check(m6, m7)
        return {"mode": "fixed", "M6": m6, "M7": m7,
                "violation_fraction": frac, "violations": n_viol,
                "pass": frac <= max_violation_fraction}
    results = {}
    for M7 in m7_grid:
        shape = t ** (-d / 2.0) * np.exp(-M7 * r2 / (2.0 * t))
        needed = np.maximum(dens - 2.0 * stderr, 0.0) / shape
        # smallest M6 leaving at most the allowed fraction of bins above
        M6 = float(np.quantile(needed, 1.0 - max_violation_fraction))
        frac, n_viol = check(M6, M7)
        results[M7] = {"M6": M6, "violation_fraction": frac,
                       "violations": n_viol}
    best_m7 = min(results, key=lambda m: results[m]["M6"])
    return {"mode": "fitted", "M7": best_m7, "M6": results[best_m7]["M6"],
            "per_m7": results, "pass": math.isfinite(results[best_m7]["M6"])}


def krylov_functional_convergence(b: SpaceTimeField, h: SpaceTimeField,
                                  n_list, ensemble: PathEnsemble,
                                  cap_eps: float = DEFAULT_CAP_EPS) -> dict:
    """E[sup_t |int h(s,X_s) ds - int h_n(s,X_s) ds|^2] for each level n.

    Riemann sums along the stored paths; the raw field is capped.  The table
    must be decreasing in n for the Krylov-type approximation property.
    """
    from .fields import mollify
    cap = 1.0 / cap_eps
    times = ensemble.times()[:-1]
    states = ensemble.states[:, :-1, :]        # left endpoints
    n_paths, n_steps, d = states.shape

    def riemann(field):
        vals = np.empty((n_paths, n_steps))
        for k in range(n_steps):
            v = field(float(times[k]), states[:, k, :])
            if v.ndim > 1:
                v = np.linalg.norm(v, axis=1)
            vals[:, k] = cap_values(v, cap)
        return np.cumsum(vals * ensemble.dt, axis=1)

    base = riemann(h)
    rows = []
    for n in sorted(n_list):
        hn = mollify(h, n)
        diff = base - riemann(hn)
        sup2 = np.max(diff * diff, axis=1)
        rows.append({"n": int(n), "mean": float(np.mean(sup2)),
                     "stderr": float(np.std(sup2, ddof=1)
                                     / math.sqrt(n_paths))})
    decreasing = all(a["mean"] >= b2["mean"] for a, b2 in zip(rows, rows[1:]))
    return {"rows": rows, "decreasing": decreasing}
