"""Space-time scalar and vector fields.

Every field is a `SpaceTimeField`: an immutable wrapper around a vectorized
evaluator ``(t, x) -> values`` on ``[0, horizon] x R^d``, extended by zero
outside ``[0, horizon]`` in time.  Singular locations are advertised through
``singular_points`` / ``singular_axes`` / ``singular_times`` so that
quadrature routines can grade their panels toward them; evaluation at a
singular location returns ``inf`` (the sentinel), never raises.

The closed-form example families (power products, ball lattices of
inverse-power bumps, and fields with an integrable time singularity) are
constructed through :func:`make_example`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache
from itertools import product
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DomainError, NumericError, ValidationError

__all__ = [
    "SpaceTimeField",
    "GridField",
    "make_example",
    "constant_field",
    "from_callable",
    "absolute",
    "squared",
    "as_drift",
    "mollify",
    "sample_to_grid",
    "cap_values",
    "DEFAULT_CAP_EPS",
]

DEFAULT_CAP_EPS = 1e-6


def cap_values(values: np.ndarray, cap: float) -> np.ndarray:
    """Replace sentinel/non-finite entries and clip to ``[-cap, cap]``."""
    out = np.nan_to_num(values, nan=cap, posinf=cap, neginf=-cap)
    return np.clip(out, -cap, cap)


@dataclass(frozen=True)
class SpaceTimeField:
    """A field on [0, horizon] x R^d, zero outside the time interval.

    ``evaluator(t, x)`` receives a scalar time (guaranteed inside
    ``[0, horizon]``) and an ``(n, dim)`` array of points and returns an
    ``(n,)`` array for scalar fields or ``(n, range_dim)`` for vector ones.
    """

    dim: int
    range_dim: int
    horizon: float
    evaluator: Callable[[float, np.ndarray], np.ndarray]
    # quadrature hints
    singular_points: tuple = ()        # isolated singular points, shape (d,)
    singular_axes: tuple = ()          # (axis, coordinate) pairs: hyperplanes x[axis] == coordinate
    singular_times: tuple = ()         # times where the field blows up
    time_constant: bool = False        # value independent of t inside [0, horizon]
    metadata: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError("dim must be a positive integer")
        if self.dim == 1:
            # the underlying theory assumes d >= 2; d = 1 kept for cheap oracles
            object.__setattr__(self, "metadata", {**self.metadata, "dim1_warning": True})
        if self.range_dim < 1:
            raise ValidationError("range_dim must be a positive integer")
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise DomainError(f"points have dimension {x.shape[1]}, field has {self.dim}")
        if t < 0.0 or t > self.horizon:
            shape = (x.shape[0],) if self.range_dim == 1 else (x.shape[0], self.range_dim)
            return np.zeros(shape)
        out = np.asarray(self.evaluator(t, x), dtype=float)
        return out

    def at(self, t: float, x) -> float | np.ndarray:
        """Evaluate at a single point; returns a scalar for scalar fields."""
        out = self(t, np.asarray(x, dtype=float).reshape(1, self.dim))
        return float(out[0]) if self.range_dim == 1 else out[0]


def from_callable(func, dim, horizon, range_dim=1, **hints) -> SpaceTimeField:
    return SpaceTimeField(dim=dim, range_dim=range_dim, horizon=horizon,
                          evaluator=func, **hints)


def constant_field(value, dim, horizon) -> SpaceTimeField:
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        def ev(t, x, c=float(value)):
            return np.full(x.shape[0], c)
        return SpaceTimeField(dim, 1, horizon, ev, time_constant=True,
                              metadata={"family": "constant", "value": float(value)})
    vec = value.copy()

    def ev(t, x, c=vec):
        return np.tile(c, (x.shape[0], 1))

    return SpaceTimeField(dim, len(vec), horizon, ev, time_constant=True,
                          metadata={"family": "constant", "value": vec.tolist()})


def absolute(f: SpaceTimeField) -> SpaceTimeField:
    def ev(t, x):
        v = f(t, x)
        return np.abs(v) if f.range_dim == 1 else np.linalg.norm(v, axis=1)
    return replace(f, range_dim=1, evaluator=ev,
                   metadata={**f.metadata, "transform": "abs"})


def squared(f: SpaceTimeField) -> SpaceTimeField:
    def ev(t, x):
        v = f(t, x)
        return v * v if f.range_dim == 1 else np.sum(v * v, axis=1)
    return replace(f, range_dim=1, evaluator=ev,
                   metadata={**f.metadata, "transform": "squared"})


def as_drift(f: SpaceTimeField, axis: int = 0) -> SpaceTimeField:
    """Embed a scalar field as a drift vector along one coordinate axis."""
    if f.range_dim != 1:
        raise ValidationError("as_drift expects a scalar field")
    if not 0 <= axis < f.dim:
        raise ValidationError("axis out of range")

    def ev(t, x):
        out = np.zeros((x.shape[0], f.dim))
        out[:, axis] = f(t, x)
        return out

    return replace(f, range_dim=f.dim, evaluator=ev,
                   metadata={**f.metadata, "drift_axis": axis})


# ---------------------------------------------------------------------------
# example families
# ---------------------------------------------------------------------------

def _power_product(alphas, dim, horizon) -> SpaceTimeField:
    alphas = np.asarray(alphas, dtype=float)
    if len(alphas) != dim:
        raise ValidationError("need one exponent per coordinate")
    if np.any(alphas <= -0.5):
        raise ValidationError("power-product exponents require alpha_i > -1/2")
    if alphas.sum() <= -1.0:
        raise ValidationError("power-product exponents require sum(alpha_i) > -1")

    def ev(t, x, a=alphas):
        base = np.minimum(np.abs(x), 1.0)
        with np.errstate(divide="ignore"):
            return np.prod(np.where((base == 0.0) & (a < 0.0)[None, :], np.inf,
                                    base ** a[None, :]), axis=1)

    axes = tuple((i, 0.0) for i in range(dim) if alphas[i] < 0.0)
    p = dim + 2.0 + 2.0 * float(alphas.sum())
    return SpaceTimeField(
        dim, 1, horizon, ev,
        singular_points=((0.0,) * dim,) if axes else (),
        singular_axes=axes, time_constant=True,
        metadata={"family": "power_product", "alphas": alphas.tolist(),
                  "theoretical_p": p})


def _ball_lattice(alpha, dim, horizon, radius_floor=1e-3) -> SpaceTimeField:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0 / dim:
        raise ValidationError("ball-lattice exponent requires alpha in (0, 1/d)")
    # radii r_i = i^{-1/(d*alpha)}; the series index in the source formula is
    # ambiguous, so we use all i >= 1 and truncate at the first radius below
    # radius_floor (see report metadata).
    radii = []
    i = 1
    while True:
        r = i ** (-1.0 / (dim * alpha))
        if r < radius_floor:
            break
        radii.append(r)
        i += 1
    radii = np.asarray(radii)
    centers = np.zeros((len(radii), dim))
    acc = 0.0
    for n, r in enumerate(radii):
        centers[n, 0] = 2.0 * acc + r
        acc += r

    def ev(t, x, c=centers, rr=radii, a=alpha):
        out = np.zeros(x.shape[0])
        for n in range(len(rr)):
            dist = np.linalg.norm(x - c[n], axis=1)
            inside = dist < rr[n]
            if np.any(inside):
                with np.errstate(divide="ignore"):
                    out[inside] += np.where(dist[inside] == 0.0, np.inf,
                                            dist[inside] ** (a - 1.0))
        return out

    p = dim + 2.0 * alpha
    return SpaceTimeField(
        dim, 1, horizon, ev,
        singular_points=tuple(tuple(c) for c in centers),
        time_constant=True,
        metadata={"family": "ball_lattice", "alpha": alpha,
                  "n_balls": len(radii), "radius_floor": radius_floor,
                  "theoretical_p": p})


def _time_singular(alpha, dim, horizon, bounded_factors=None) -> SpaceTimeField:
    alpha = float(alpha)
    if not (-0.5 < alpha <= -1.0 / (2 * dim)):
        raise ValidationError("time-singular exponent requires alpha in (-1/2, -1/(2d)]")
    factors = bounded_factors or [None] * (dim - 1)
    if len(factors) != dim - 1:
        raise ValidationError("need one bounded factor per coordinate i >= 2")

    def ev(t, x, a=alpha, g=factors):
        with np.errstate(divide="ignore"):
            tf = np.inf if t == 0.0 else t ** (-0.25)
            base = np.minimum(np.abs(x[:, 0]), 1.0)
            out = np.where((base == 0.0), np.inf, base ** a) * tf
        for i, gi in enumerate(g):
            if gi is not None:
                out = out * gi(x[:, i + 1])
        return out

    p = dim + 2.0 * alpha + 1.0
    return SpaceTimeField(
        dim, 1, horizon, ev,
        singular_points=((0.0,) * dim,),
        singular_axes=((0, 0.0),), singular_times=(0.0,),
        metadata={"family": "time_singular", "alpha": alpha, "theoretical_p": p})


_FAMILIES = {
    "power_product": _power_product,
    "ball_lattice": _ball_lattice,
    "time_singular": _time_singular,
}


def make_example(family: str, params, dim: int, horizon: float, **kwargs) -> SpaceTimeField:
    """Construct one of the closed-form example fields.

    ``params`` is the exponent vector for ``power_product`` and the scalar
    exponent for the other two families.  The field's ``metadata`` carries the
    theoretical window exponent of the squared field.
    """
    key = family.lower()
    if key not in _FAMILIES:
        raise ValidationError(f"unknown family {family!r}; choose from {sorted(_FAMILIES)}")
    return _FAMILIES[key](params, dim, horizon, **kwargs)


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------

def _bump_profile(w):
    """exp(-1/(1-w^2)) on |w| < 1, zero outside."""
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    inside = np.abs(w) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - w[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def _mollifier_rule(dim: int, order: int):
    """Quadrature nodes/weights on (0,1) x [-1,1]^d against the master bump.

    The bump is phi(s, w) = psi(2s - 1) * psi(|w|); weights are normalized to
    sum to one, so mollification reproduces constants exactly.
    """
    gl_nodes, gl_w = leggauss(order)
    s_nodes = 0.5 * (gl_nodes + 1.0)         # (0,1)
    s_w = 0.5 * gl_w * _bump_profile(2.0 * s_nodes - 1.0)
    axes = [gl_nodes] * dim
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    wmesh = np.ones(mesh.shape[0])
    for ax_w in np.meshgrid(*([gl_w] * dim), indexing="ij"):
        wmesh = wmesh * ax_w.reshape(-1)
    wmesh = wmesh * _bump_profile(np.linalg.norm(mesh, axis=1))
    keep = wmesh > 0.0
    mesh, wmesh = mesh[keep], wmesh[keep]
    weights = np.outer(s_w, wmesh)
    weights /= weights.sum()
    return s_nodes, mesh, weights


def mollify(f: SpaceTimeField, n: int, order: int = 8) -> SpaceTimeField:
    """Convolve with the rescaled bump at level ``n`` (support width 2^-n).

    The result is bounded and continuous; singularity hints are dropped.
    """
    if n < 1:
        raise ValidationError("mollification level must satisfy n >= 1")
    scale = 2.0 ** (-n)
    s_nodes, w_nodes, weights = _mollifier_rule(f.dim, order)

    def ev(t, x):
        n = x.shape[0]
        K = len(w_nodes)
        shifted = (x[:, None, :] - scale * w_nodes[None, :, :]).reshape(n * K, f.dim)

        def batch(ts, row_weights):
            v = f(ts, shifted)
            if f.range_dim == 1:
                return np.einsum("k,nk->n", row_weights, v.reshape(n, K))
            return np.einsum("k,nkm->nm", row_weights,
                             v.reshape(n, K, f.range_dim))

        if f.time_constant:
            # separable: spatial convolution times the in-window bump mass
            valid = [i for i, s in enumerate(s_nodes)
                     if 0.0 <= t - scale * s <= f.horizon]
            if not valid:
                shape = (n,) if f.range_dim == 1 else (n, f.range_dim)
                return np.zeros(shape)
            mu = weights[valid].sum() / weights.sum()
            t_in = t - scale * s_nodes[valid[0]]
            acc = mu * batch(t_in, weights.sum(axis=0))
        else:
            acc = None
            for i, s in enumerate(s_nodes):
                ts = t - scale * s
                if ts < 0.0 or ts > f.horizon:
                    continue
                v = batch(ts, weights[i])
                acc = v if acc is None else acc + v
            if acc is None:
                shape = (n,) if f.range_dim == 1 else (n, f.range_dim)
                return np.zeros(shape)
        if not np.all(np.isfinite(acc)):
            bad = np.argwhere(~np.isfinite(np.atleast_2d(acc.T).T))[0]
            raise NumericError("non-finite value in mollification quadrature",
                               t=t, x=x[bad[0]])
        return acc

    return SpaceTimeField(f.dim, f.range_dim, f.horizon, ev,
                          time_constant=False,
                          metadata={**f.metadata, "mollified": n})


# ---------------------------------------------------------------------------
# grid fields
# ---------------------------------------------------------------------------

@dataclass
class GridField:
    """Dense samples on a uniform [0,T] x [-L,L]^d lattice.

    ``values`` has shape (nt+1, nx+1, ..., nx+1[, range_dim]).  Space is
    interpolated multilinearly and clamped outside the box; time linearly,
    with the zero-outside-[0,T] convention of SpaceTimeField.
    """

    dim: int
    range_dim: int
    horizon: float
    box: float                 # half-width L
    values: np.ndarray

    @property
    def time_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def space_steps(self) -> int:
        return self.values.shape[1] - 1

    @property
    def spacing(self) -> float:
        return 2.0 * self.box / self.space_steps

    def axis_nodes(self) -> np.ndarray:
        return np.linspace(-self.box, self.box, self.space_steps + 1)

    def time_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.time_steps + 1)

    def _interp_slice(self, slice_values: np.ndarray, x: np.ndarray) -> np.ndarray:
        nx = self.space_steps
        pos = np.clip((x + self.box) / self.spacing, 0.0, float(nx))
        idx = np.minimum(pos.astype(int), nx - 1)
        frac = pos - idx
        out = None
        for corner in product((0, 1), repeat=self.dim):
            w = np.ones(x.shape[0])
            gather = []
            for ax, c in enumerate(corner):
                w = w * (frac[:, ax] if c else 1.0 - frac[:, ax])
                gather.append(idx[:, ax] + c)
            vals = slice_values[tuple(gather)]
            contrib = vals * (w if self.range_dim == 1 else w[:, None])
            out = contrib if out is None else out + contrib
        return out

    def evaluate(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if t < 0.0 or t > self.horizon:
            shape = (x.shape[0],) if self.range_dim == 1 else (x.shape[0], self.range_dim)
            return np.zeros(shape)
        nt = self.time_steps
        pos = t / self.horizon * nt
        k = min(int(pos), nt - 1)
        frac = pos - k
        lo = self._interp_slice(self.values[k], x)
        if frac == 0.0:
            return lo
        hi = self._interp_slice(self.values[k + 1], x)
        return (1.0 - frac) * lo + frac * hi

    def as_field(self, metadata: Optional[dict] = None) -> SpaceTimeField:
        return SpaceTimeField(self.dim, self.range_dim, self.horizon,
                              self.evaluate, metadata=metadata or {"family": "grid"})


def sample_to_grid(f: SpaceTimeField, box: float, time_steps: int,
                   space_steps: int, cap_eps: float = DEFAULT_CAP_EPS) -> GridField:
    """Sample a field on a uniform lattice, applying the cap policy.

    Sentinel (non-finite) values are replaced by +-1/cap_eps so downstream
    consumers always see finite numbers.
    """
    if box <= 0 or time_steps < 1 or space_steps < 1:
        raise ValidationError("box and resolutions must be positive")
    cap = 1.0 / cap_eps
    axis = np.linspace(-box, box, space_steps + 1)
    mesh = np.stack(np.meshgrid(*([axis] * f.dim), indexing="ij"), axis=-1)
    flat = mesh.reshape(-1, f.dim)
    times = np.linspace(0.0, f.horizon, time_steps + 1)
    slices = []
    for t in times:
        vals = f(float(t), flat)
        vals = cap_values(vals, cap)
        shape = mesh.shape[:-1] if f.range_dim == 1 else mesh.shape[:-1] + (f.range_dim,)
        slices.append(vals.reshape(shape))
    return GridField(f.dim, f.range_dim, f.horizon, float(box), np.stack(slices))
