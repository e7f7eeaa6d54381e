"""Mild solution of the backward Kolmogorov equation by Picard iteration.

The fixed point solved for is

    u(t,x) = int_t^T int q(s-t, x, y) [ <b(s,y), grad u(s,y)> - f(s,y) ] dy ds

with zero terminal data.  Each sweep evaluates the space-time convolution on
a uniform lattice: Gaussian smoothing at scale sqrt(s-t) (scipy's separable
Gaussian filters with clamped extension, matching the grid interpolation
convention), dyadic time cells graded toward the s -> t kernel singularity,
and an identity-approximation floor cell below the lattice resolution.
Gradients and Hessians use the analytic kernel derivatives (derivative-of-
Gaussian filters), never differences of u.

The admissible horizon comes from the contraction budget: C0 N^1_b(T) <= 1/2
and C0 N^1_f(T) <= 1/(2d), with C0 the kernel-gradient constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.ndimage import gaussian_filter

from .errors import (ContractionViolationError, HorizonNotFoundError,
                     NoConvergenceError, ValidationError)
from .fields import (DEFAULT_CAP_EPS, GridField, SpaceTimeField, cap_values,
                     sample_to_grid)
from .heatkernel import QuadraturePolicy, kernel_gradient_constant, nlambda
from .kato import fit_exponent, window_scan

__all__ = [
    "GridSpec",
    "ContractionBudget",
    "MildSolutionGrid",
    "choose_horizon",
    "picard_solve",
    "regularity_certificate",
    "hessian_window_check",
    "mollified_convergence",
]

_TRUNCATE = 6.0   # Gaussian filter support in sigmas


@dataclass(frozen=True)
class GridSpec:
    box: float = 1.0
    time_steps: int = 64
    space_steps: int = 64

    def __post_init__(self):
        if self.box <= 0 or self.time_steps < 4 or self.space_steps < 8:
            raise ValidationError("grid spec too coarse (need >= 4 time steps)")


@dataclass
class ContractionBudget:
    C0: float
    t_star: float
    n1b: float                 # N^1_b(T_star)
    n1f: float                 # N^1_f(T_star)
    table: dict                # {T: (N1b, N1f)}

    @property
    def product(self) -> float:
        return self.C0 * self.n1b

    def admissible(self, dim: int) -> bool:
        return (self.C0 * self.n1b <= 0.5 + 1e-12
                and self.C0 * self.n1f <= 0.5 / dim + 1e-12)

    def to_dict(self):
        return {"C0": self.C0, "t_star": self.t_star, "n1b": self.n1b,
                "n1f": self.n1f, "product": self.product,
                "table": {str(T): list(v) for T, v in sorted(self.table.items())}}


def choose_horizon(b: SpaceTimeField, f: SpaceTimeField,
                   t_grid=None, quad: QuadraturePolicy = QuadraturePolicy(),
                   bisect_steps: int = 6) -> ContractionBudget:
    """Largest horizon satisfying the contraction inequalities.

    Scans a decreasing T grid, then bisects between the smallest failing and
    the largest passing grid point.
    """
    d = b.dim
    if f.dim != d:
        raise ValidationError("drift and source dimensions differ")
    C0 = kernel_gradient_constant(d)
    T_max = min(b.horizon, f.horizon)
    if t_grid is None:
        t_grid = np.geomspace(T_max, T_max * 1e-3, 10)
    t_grid = sorted(set(float(T) for T in t_grid), reverse=True)

    def budget_at(T):
        nb = nlambda(b, T, lam=1.0, quad=quad)
        nf = nlambda(f, T, lam=1.0, quad=quad)
        return nb, nf

    def ok(nb, nf):
        return C0 * nb <= 0.5 and C0 * nf <= 0.5 / d

    table = {}
    t_pass, t_fail = None, None
    for T in t_grid:
        nb, nf = budget_at(T)
        table[T] = (nb, nf)
        if ok(nb, nf):
            t_pass = T
            break
        t_fail = T
    if t_pass is None:
        raise HorizonNotFoundError(
            "no horizon in the search grid satisfies the contraction budget")
    if t_fail is not None:
        lo, hi = t_pass, t_fail
        for _ in range(bisect_steps):
            mid = 0.5 * (lo + hi)
            nb, nf = budget_at(mid)
            table[mid] = (nb, nf)
            if ok(nb, nf):
                lo = mid
            else:
                hi = mid
        t_pass = lo
    nb, nf = table[t_pass]
    return ContractionBudget(C0=C0, t_star=t_pass, n1b=nb, n1f=nf, table=table)


# ---------------------------------------------------------------------------
# lattice convolution machinery
# ---------------------------------------------------------------------------

def _smooth(slice_arr: np.ndarray, sigma_px: float, dim: int, order=None):
    """Gaussian smoothing over the leading ``dim`` axes only.

    ``order`` is a per-space-axis derivative order tuple; trailing component
    axes are untouched.  sigma_px <= 0 collapses to the identity / raw
    finite-difference stencil of the requested derivative.
    """
    extra = slice_arr.ndim - dim
    sig = (sigma_px,) * dim + (0.0,) * extra
    orders = tuple(order) + (0,) * extra if order is not None else 0
    return gaussian_filter(slice_arr, sigma=sig, order=orders,
                           mode="nearest", truncate=_TRUNCATE)


def _grid_gradient(slice_arr: np.ndarray, dim: int, h: float) -> np.ndarray:
    """Central-difference gradient over the space axes; shape (..., dim)."""
    outs = [np.gradient(slice_arr, h, axis=ax) for ax in range(dim)]
    return np.stack(outs, axis=-1)


def _sample_lattice(f: SpaceTimeField, box: float, times: np.ndarray,
                    nx: int, cap_eps: float = DEFAULT_CAP_EPS) -> np.ndarray:
    """Capped samples of f on the solve-time grid (not the field horizon)."""
    axis = np.linspace(-box, box, nx + 1)
    mesh = np.stack(np.meshgrid(*([axis] * f.dim), indexing="ij"), axis=-1)
    flat = mesh.reshape(-1, f.dim)
    cap = 1.0 / cap_eps
    slices = []
    for t in times:
        vals = cap_values(np.asarray(f(float(t), flat), dtype=float), cap)
        shape = mesh.shape[:-1] if f.range_dim == 1 else \
            mesh.shape[:-1] + (f.range_dim,)
        slices.append(vals.reshape(shape))
    return np.stack(slices)


def _dyadic_tau_cells(width: float, floor: float, levels: int):
    """Dyadic cells of (0, width] down to ``floor``; returns (cells, floor_edge)."""
    cells = []
    hi = width
    for _ in range(levels):
        lo = hi / 2.0
        if lo < floor:
            break
        cells.append((lo, hi))
        hi = lo
    return cells, hi


@dataclass
class MildSolutionGrid:
    dim: int
    range_dim: int
    horizon: float
    box: float
    u: np.ndarray               # (nt+1, *space, m)
    grad_u: np.ndarray          # (nt+1, *space, m, d)
    iterations: int
    increments: list            # sup |grad u_{k+1} - grad u_k| per sweep
    u_increments: list          # sup |u_{k+1} - u_k| per sweep
    budget: ContractionBudget
    hess_u: np.ndarray = None   # (nt+1, *space, m, d, d), on demand

    @property
    def time_steps(self) -> int:
        return self.u.shape[0] - 1

    @property
    def space_steps(self) -> int:
        return self.u.shape[1] - 1

    @property
    def spacing(self) -> float:
        return 2.0 * self.box / self.space_steps

    def u_field(self) -> GridField:
        vals = self.u[..., 0] if self.range_dim == 1 else self.u
        return GridField(self.dim, self.range_dim, self.horizon, self.box, vals)

    def grad_field(self) -> GridField:
        flat = self.grad_u.reshape(self.grad_u.shape[:-2]
                                   + (self.range_dim * self.dim,))
        return GridField(self.dim, self.range_dim * self.dim, self.horizon,
                         self.box, flat)

    def grad_at(self, t: float, x) -> np.ndarray:
        out = self.grad_field().evaluate(t, np.atleast_2d(x))
        return out.reshape(-1, self.range_dim, self.dim)

    def u_at(self, t: float, x) -> np.ndarray:
        out = self.u_field().evaluate(t, np.atleast_2d(x))
        return out if self.range_dim > 1 else out[:, None]


def _sweep(g: np.ndarray, times: np.ndarray, h: float, dim: int,
           levels: int, want_hessian: bool = False):
    """One application of the backward heat-kernel operator K to lattice data g.

    g has shape (nt+1, *space, m); returns (u, grad_u[, hess_u]) with the
    terminal slice zero.
    """
    nt = len(times) - 1
    T = times[-1]
    m = g.shape[-1]
    space_shape = g.shape[1:-1]
    u = np.zeros_like(g)
    grad = np.zeros(g.shape + (dim,))
    hess = np.zeros(g.shape + (dim, dim)) if want_hessian else None
    gl_x, gl_w = leggauss(2)
    tau_floor = (h / 2.0) ** 2
    dt_lat = times[1] - times[0]

    def g_interp(s):
        pos = np.clip(s / T * nt, 0.0, float(nt))
        k = min(int(pos), nt - 1)
        frac = pos - k
        return (1.0 - frac) * g[k] + frac * g[k + 1]

    for i in range(nt):           # terminal slice stays zero
        width = T - times[i]
        cells, floor_edge = _dyadic_tau_cells(width, tau_floor, levels)
        acc_u = np.zeros(space_shape + (m,))
        acc_g = np.zeros(space_shape + (m, dim))
        acc_h = np.zeros(space_shape + (m, dim, dim)) if want_hessian else None
        for lo, hi in cells:
            half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
            for xi, wi in zip(gl_x, gl_w):
                tau = mid + half * xi
                gs = g_interp(times[i] + tau)
                sigma = math.sqrt(tau) / h
                w = half * wi
                acc_u += w * _smooth(gs, sigma, dim)
                for ax in range(dim):
                    order = tuple(1 if a == ax else 0 for a in range(dim))
                    acc_g[..., ax] += (w / h) * _smooth(gs, sigma, dim, order)
                if want_hessian:
                    for ax in range(dim):
                        for ay in range(ax, dim):
                            order = tuple((1 if a == ax else 0)
                                          + (1 if a == ay else 0)
                                          for a in range(dim))
                            val = (w / h ** 2) * _smooth(gs, sigma, dim, order)
                            acc_h[..., ax, ay] += val
                            if ay != ax:
                                acc_h[..., ay, ax] += val
        if floor_edge > 0.0:
            # below lattice resolution the kernel acts as the identity
            gs = g[i]
            acc_u += floor_edge * gs
            acc_g += floor_edge * _grid_gradient(gs, dim, h)
            # the floor-cell Hessian term is O(tau_floor) and omitted
        u[i] = acc_u
        grad[i] = acc_g
        if want_hessian:
            hess[i] = acc_h
    if want_hessian:
        return u, grad, hess
    return u, grad


def picard_solve(b: SpaceTimeField, f: SpaceTimeField,
                 budget: ContractionBudget, grid: GridSpec = GridSpec(),
                 tol: float = 1e-6, max_iter: int = 60,
                 time_levels: int = 30) -> MildSolutionGrid:
    """Iterate u_{k+1} = K[<b, grad u_k> - f] from u_0 = 0 until the
    gradient increment drops below ``tol``."""
    d = b.dim
    if b.range_dim != d:
        raise ValidationError("drift must be vector-valued with range_dim = dim")
    if not budget.admissible(d):
        raise ValidationError("contraction budget is not admissible")
    T = budget.t_star
    nt, nx = grid.time_steps, grid.space_steps
    if T < 4.0 * (T / nt):      # guaranteed by construction; keep the guard
        raise HorizonNotFoundError("degenerate horizon: fewer than 4 time steps; "
                                   "increase mollification of the drift")
    m = f.range_dim
    h = 2.0 * grid.box / nx
    times = np.linspace(0.0, T, nt + 1)

    # lattice samples of b and f (capped) on the solve-time grid
    b_grid = _sample_lattice(b, grid.box, times, nx)
    f_grid = _sample_lattice(f, grid.box, times, nx)
    if m == 1:
        f_grid = f_grid[..., None]

    grad = np.zeros(f_grid.shape + (d,))
    u = np.zeros_like(f_grid)
    increments, u_increments, ratios = [], [], []
    stall = 0
    for it in range(1, max_iter + 1):
        # g = <b, grad u> - f  per component of u
        g = np.einsum("...md,...d->...m", grad, b_grid) - f_grid
        u_new, grad_new = _sweep(g, times, h, d, time_levels)
        ginc = float(np.max(np.abs(grad_new - grad)))
        uinc = float(np.max(np.abs(u_new - u)))
        if increments and increments[-1] > 0:
            ratio = ginc / increments[-1]
            ratios.append(ratio)
            stall = stall + 1 if ratio > 0.9 else 0
            if stall >= 3:
                raise ContractionViolationError(
                    f"increment ratio above 0.9 for 3 sweeps (last {ratio:.3f})")
        increments.append(ginc)
        u_increments.append(uinc)
        u, grad = u_new, grad_new
        if ginc < tol:
            return MildSolutionGrid(dim=d, range_dim=m, horizon=T,
                                    box=grid.box, u=u, grad_u=grad,
                                    iterations=it, increments=increments,
                                    u_increments=u_increments, budget=budget)
    raise NoConvergenceError(f"no convergence after {max_iter} sweeps "
                             f"(last increment {increments[-1]:.3e})")


def compute_hessian(sol: MildSolutionGrid, b: SpaceTimeField,
                    f: SpaceTimeField, time_levels: int = 30) -> np.ndarray:
    """Hessian of u by analytic second-derivative kernel convolution."""
    d, m = sol.dim, sol.range_dim
    nt, nx = sol.time_steps, sol.space_steps
    times = np.linspace(0.0, sol.horizon, nt + 1)
    b_grid = _sample_lattice(b, sol.box, times, nx)
    f_grid = _sample_lattice(f, sol.box, times, nx)
    if m == 1:
        f_grid = f_grid[..., None]
    g = np.einsum("...md,...d->...m", sol.grad_u, b_grid) - f_grid
    _, _, hess = _sweep(g, times, sol.spacing, d, time_levels, want_hessian=True)
    sol.hess_u = hess
    return hess


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

def regularity_certificate(sol: MildSolutionGrid, n_pairs: int = 10000,
                           n_time_pairs: int = 400, seed: int = 3,
                           lipschitz_slack: float = 1.05, p: float = None) -> dict:
    """Spatial half-Lipschitz check plus time-Hoelder fit for grad u."""
    rng = np.random.default_rng(seed)
    d = sol.dim
    L = sol.box
    X = rng.uniform(-L, L, (n_pairs, d))
    Y = rng.uniform(-L, L, (n_pairs, d))
    tchk = rng.uniform(0.0, sol.horizon, n_pairs)
    uf = sol.u_field()
    sep = np.linalg.norm(X - Y, axis=1)
    diffs = np.empty(n_pairs)
    for i in range(n_pairs):
        ux = uf.evaluate(tchk[i], X[i][None])
        uy = uf.evaluate(tchk[i], Y[i][None])
        diffs[i] = np.linalg.norm(np.atleast_1d(ux - uy))
    ok = diffs <= 0.5 * lipschitz_slack * sep + 1e-12
    violations = np.where(~ok)[0]
    lip = float(np.max(diffs / np.maximum(sep, 1e-300)))

    # time-Hoelder exponent of grad u at fixed x
    times = np.linspace(0.0, sol.horizon, sol.time_steps + 1)
    gaps, dgs = [], []
    # stay away from the terminal slice where grad u vanishes by construction
    usable = times[: int(0.75 * len(times))]
    gf = sol.grad_field()
    for _ in range(n_time_pairs):
        x = rng.uniform(-0.5 * L, 0.5 * L, (1, d))
        t1, t2 = rng.choice(usable, 2, replace=False)
        g1 = gf.evaluate(float(t1), x)
        g2 = gf.evaluate(float(t2), x)
        dg = float(np.linalg.norm(g1 - g2))
        if dg > 1e-12:
            gaps.append(abs(t1 - t2))
            dgs.append(dg)
    if len(gaps) >= 8:
        slope, intercept = np.polyfit(np.log(gaps), np.log(dgs), 1)
        holder = float(slope)
    else:
        holder = None              # gradient (numerically) time-constant
    admissible_hi = None
    if p is not None:
        admissible_hi = min((p - d - 1) / 2.0, (p - d) / (d + 3.0), 1.0)
    return {"lipschitz_pass": bool(len(violations) == 0),
            "lipschitz_constant": lip,
            "violations": violations.tolist()[:20],
            "holder_alpha": holder,
            "holder_admissible_hi": admissible_hi}


def hessian_window_check(sol: MildSolutionGrid, b: SpaceTimeField,
                         f: SpaceTimeField, radii=None, probes=None,
                         quad: QuadraturePolicy = QuadraturePolicy()) -> dict:
    """Window exponent of the squared Hessian norm; pass iff above dimension."""
    hess = sol.hess_u if sol.hess_u is not None else compute_hessian(sol, b, f)
    sq = np.sum(hess * hess, axis=(-3, -2, -1))
    if np.all(sq == 0.0):
        return {"fitted_q": math.inf, "pass": True, "degenerate": True}
    field = GridField(sol.dim, 1, sol.horizon, sol.box, sq).as_field(
        {"family": "hessian_squared"})
    if radii is None:
        radii = [2.0 ** (-k) for k in range(2, 6)]
    scan = window_scan(field, radii=radii, probes=probes, quad=quad)
    q, M, r2 = fit_exponent(scan)
    return {"fitted_q": q, "fitted_M": M, "fit_r2": r2,
            "pass": bool(q > sol.dim), "degenerate": False}


def mollified_convergence(b: SpaceTimeField, f: SpaceTimeField, n_list,
                          grid: GridSpec = GridSpec(), budget=None,
                          tol: float = 1e-6) -> dict:
    """Sup-distance of u and grad u between mollified and raw-field solves.

    Distances are measured over the middle half of the box and must decrease
    along ``n_list``.
    """
    from .fields import mollify
    if budget is None:
        budget = choose_horizon(b, f)
    ref = picard_solve(b, f, budget, grid, tol)
    lo = grid.space_steps // 4
    hi = grid.space_steps - lo + 1
    core = (slice(None),) + (slice(lo, hi),) * b.dim
    rows = []
    for n in sorted(n_list):
        bn = mollify(b, n)
        fn = bn if f is b else mollify(f, n)
        sol = picard_solve(bn, fn, budget, grid, tol)
        du = float(np.max(np.abs(sol.u[core] - ref.u[core])))
        dg = float(np.max(np.abs(sol.grad_u[core] - ref.grad_u[core])))
        rows.append({"n": n, "du": du, "dgrad": dg})
    dec = all(a["du"] >= b2["du"] for a, b2 in zip(rows, rows[1:]))
    return {"rows": rows, "decreasing": dec}
