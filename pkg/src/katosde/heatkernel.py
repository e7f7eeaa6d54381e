"""Gaussian heat kernel, its derivatives, and singular space-time quadrature.

The kernel is the transition density of standard d-dimensional Brownian
motion, q(t,x,y) = (2*pi*t)^{-d/2} exp(-|x-y|^2 / (2t)).  The quadrature
routine evaluates iterated integrals of the form

    int_0^T int s^{-gamma} exp(-rate*|x-y|^2/(2s)) |f(t +- s, y)| dy ds

with a dyadic decomposition of the time axis (graded toward s = 0 and toward
any interior time singularity of f) and a tensor Gauss-Legendre space rule
whose panels are graded toward the field's singular hyperplanes and points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import AccuracyError, DomainError, ValidationError
from .fields import SpaceTimeField

__all__ = [
    "q_eval",
    "grad_q_eval",
    "hess_q_eval",
    "QuadraturePolicy",
    "KernelIntegralSpec",
    "kernel_integral",
    "sup_probe",
    "nlambda",
    "kernel_gradient_constant",
    "graded_axis",
    "graded_time_cells",
]


# ---------------------------------------------------------------------------
# kernel and derivatives
# ---------------------------------------------------------------------------

def _prep(t, x, y):
    if t <= 0.0:
        raise DomainError("heat kernel requires t > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return x, y, x - y


def q_eval(t: float, x, y) -> np.ndarray | float:
    """Gaussian transition density; broadcasts over leading axes of x, y."""
    x, y, diff = _prep(t, x, y)
    d = diff.shape[-1]
    r2 = np.sum(diff * diff, axis=-1)
    val = (2.0 * math.pi * t) ** (-d / 2.0) * np.exp(-r2 / (2.0 * t))
    return float(val) if np.ndim(val) == 0 else val


def grad_q_eval(t: float, x, y) -> np.ndarray:
    """Spatial gradient in x: -(x-y)/t * q(t,x,y)."""
    x, y, diff = _prep(t, x, y)
    q = q_eval(t, x, y)
    return -diff / t * np.asarray(q)[..., None]


def hess_q_eval(t: float, x, y) -> np.ndarray:
    """Spatial Hessian in x: ((x-y)(x-y)^T / t^2 - I/t) * q(t,x,y)."""
    x, y, diff = _prep(t, x, y)
    d = diff.shape[-1]
    q = np.asarray(q_eval(t, x, y))
    outer = diff[..., :, None] * diff[..., None, :] / t ** 2
    return (outer - np.eye(d) / t) * q[..., None, None]


@lru_cache(maxsize=None)
def kernel_gradient_constant(dim: int) -> float:
    """Smallest C0 with |grad_x q(s,x,y)| <= C0 s^{-(d+1)/2} e^{-|x-y|^2/(4s)}.

    Estimated numerically; the exact value is (2 pi)^{-d/2} sup_u u e^{-u^2/4}.
    """
    u = np.linspace(1e-6, 12.0, 400001)
    peak = float(np.max(u * np.exp(-u * u / 4.0)))
    return (2.0 * math.pi) ** (-dim / 2.0) * peak


# ---------------------------------------------------------------------------
# graded panel construction
# ---------------------------------------------------------------------------

def _geometric_boundaries(a: float, b: float, toward_a: bool, levels: int):
    """Panel boundaries on [a,b], geometrically refined toward one endpoint."""
    width = b - a
    ks = 2.0 ** (-np.arange(1, levels + 1))
    if toward_a:
        pts = a + width * ks[::-1]
        return np.concatenate(([a + width * 2.0 ** (-levels - 1)], pts, [b]))
    pts = b - width * ks          # already increasing toward b
    return np.concatenate(([a], pts, [b - width * 2.0 ** (-levels - 1)]))


def graded_axis(lo: float, hi: float, base_panels: int, special=(), levels: int = 24):
    """1D Gauss-Legendre(2) nodes/weights with panels graded toward ``special``.

    Points of ``special`` outside (lo, hi) are ignored.  A relative gap of
    2^-levels of the containing panel is left around each special point, which
    is negligible for integrable singularities.
    """
    special = sorted({float(s) for s in special if lo < s < hi})
    cuts = np.linspace(lo, hi, base_panels + 1)
    boundaries = [np.asarray(cuts)]
    if special:
        segments = []
        edges = np.unique(np.concatenate([cuts, special]))
        boundaries = []
        for a, b in zip(edges[:-1], edges[1:]):
            toward_a = a in special
            toward_b = b in special
            if toward_a and toward_b:
                m = 0.5 * (a + b)
                boundaries.append(_geometric_boundaries(a, m, True, levels))
                boundaries.append(_geometric_boundaries(m, b, False, levels))
            elif toward_a:
                boundaries.append(_geometric_boundaries(a, b, True, levels))
            elif toward_b:
                boundaries.append(_geometric_boundaries(a, b, False, levels))
            else:
                boundaries.append(np.asarray([a, b]))
        del segments
    gl_x, gl_w = leggauss(2)
    nodes, weights = [], []
    for bnd in boundaries:
        a = bnd[:-1]
        b = bnd[1:]
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        for xi, wi in zip(gl_x, gl_w):
            nodes.append(mid + half * xi)
            weights.append(half * wi)
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    order = np.argsort(nodes)
    return nodes[order], weights[order]


def graded_time_cells(T: float, special=(), levels: int = 20):
    """Dyadic cells covering (0, T], graded toward 0 and interior specials.

    Returns a list of (a, b) intervals in decreasing-size order per segment.
    """
    special = sorted({float(s) for s in special if 0.0 < s < T})
    edges = [0.0] + special + [T]
    cells = []
    for a, b in zip(edges[:-1], edges[1:]):
        toward_a = (a == 0.0) or (a in special)
        toward_b = b in special
        width = b - a
        if toward_a and toward_b:
            m = a + 0.5 * width
            for k in range(levels):
                cells.append((a + 0.5 * width * 2.0 ** (-k - 1), a + 0.5 * width * 2.0 ** (-k)))
                cells.append((b - 0.5 * width * 2.0 ** (-k), b - 0.5 * width * 2.0 ** (-k - 1)))
            del m
        elif toward_b:
            for k in range(levels):
                cells.append((b - width * 2.0 ** (-k), b - width * 2.0 ** (-k - 1)))
        else:
            for k in range(levels):
                cells.append((a + width * 2.0 ** (-k - 1), a + width * 2.0 ** (-k)))
    return cells


# ---------------------------------------------------------------------------
# kernel-weighted space-time integrals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraturePolicy:
    time_levels: int = 20
    time_order: int = 4
    space_points_per_axis: int = 32      # base panels per axis
    grade_levels: int = 24
    rel_tol: float = 1e-3
    tail_sigmas: float = 8.0             # spatial box half-width in units of sqrt(s/rate)

    def scaled(self, factor: int) -> "QuadraturePolicy":
        """A finer policy for oracle-style cross checks."""
        return replace(self, space_points_per_axis=self.space_points_per_axis * factor,
                       time_order=self.time_order + 2)


@dataclass(frozen=True)
class KernelIntegralSpec:
    field: SpaceTimeField
    gamma: float
    rate: float                # lambda in exp(-lambda |x-y|^2 / (2 s))
    horizon: float             # upper time limit T of the s-integral
    anchor_t: float = 0.0
    anchor_x: tuple = None
    direction: str = "forward"  # field evaluated at t + s (forward) or t - s

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValidationError("direction must be 'forward' or 'backward'")
        if self.rate <= 0 or self.horizon <= 0:
            raise ValidationError("rate and horizon must be positive")
        d = self.field.dim
        if not self.gamma < (d + 2) / 2.0 + 1.0:
            raise ValidationError("gamma too large for a convergent Kato-type integral")
        if self.anchor_x is None:
            object.__setattr__(self, "anchor_x", (0.0,) * d)


def _space_nodes(field: SpaceTimeField, x: np.ndarray, s: float, rate: float,
                 quad: QuadraturePolicy):
    """Tensor GL nodes, combined weights (incl. Gaussian factor) around x."""
    d = field.dim
    W = quad.tail_sigmas * math.sqrt(s / rate)
    per_axis = []
    base = quad.space_points_per_axis if d <= 2 else max(8, quad.space_points_per_axis // 2)
    for ax in range(d):
        special = [c for a, c in field.singular_axes if a == ax]
        special += [p[ax] for p in field.singular_points]
        nodes, weights = graded_axis(x[ax] - W, x[ax] + W, base, special,
                                     quad.grade_levels)
        gauss = np.exp(-rate * (nodes - x[ax]) ** 2 / (2.0 * s))
        per_axis.append((nodes, weights * gauss))
    mesh = np.stack(np.meshgrid(*[n for n, _ in per_axis], indexing="ij"),
                    axis=-1).reshape(-1, d)
    wmesh = np.ones(1)
    for _, w in per_axis:
        wmesh = np.multiply.outer(wmesh, w)
    return mesh, wmesh.reshape(-1)


def _space_integral(field, t_eval, x, s, rate, quad, mesh_cache):
    key = round(math.log(s), 6)
    if key not in mesh_cache:
        mesh_cache[key] = _space_nodes(field, x, s, rate, quad)
    mesh, wmesh = mesh_cache[key]
    vals = np.abs(field(t_eval, mesh))
    if vals.ndim > 1:
        vals = np.linalg.norm(vals, axis=1)
    finite = np.isfinite(vals)
    return float(np.dot(vals[finite], wmesh[finite]))


def kernel_integral(spec: KernelIntegralSpec, quad: QuadraturePolicy = QuadraturePolicy()) -> float:
    """Evaluate the kernel-weighted integral described by ``spec``.

    Time uses dyadic cells with per-cell Gauss rules, truncated when a cell
    contributes less than rel_tol/100 of the running total, plus a geometric
    tail correction.  Raises AccuracyError when cell contributions stop
    decreasing at the truncation depth.
    """
    field = spec.field
    x = np.asarray(spec.anchor_x, dtype=float)
    t0 = spec.anchor_t
    sign = 1.0 if spec.direction == "forward" else -1.0
    # interior time singularities of the integrand, in s coordinates
    specials = []
    for ts in field.singular_times:
        s_star = sign * (ts - t0)
        if 0.0 < s_star < spec.horizon:
            specials.append(s_star)
    cells = graded_time_cells(spec.horizon, specials, quad.time_levels)

    gl_x, gl_w = leggauss(quad.time_order)
    mesh_cache: dict = {}
    total = 0.0
    contributions = []
    # group cells per segment so the truncation logic sees decreasing sizes
    for a, b in cells:
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        contrib = 0.0
        for xi, wi in zip(gl_x, gl_w):
            s = mid + half * xi
            t_eval = t0 + sign * s
            if t_eval < 0.0 or t_eval > field.horizon:
                continue
            inner = _space_integral(field, t_eval, x, s, spec.rate, quad, mesh_cache)
            contrib += half * wi * s ** (-spec.gamma) * inner
        contributions.append(contrib)
        total += contrib
        if total > 0.0 and contrib < 1e-2 * quad.rel_tol * total and len(contributions) >= 4:
            break
    if total == 0.0:
        return 0.0
    # geometric tail correction from the last two nonzero contributions
    tail = [c for c in contributions[-2:] if c > 0.0]
    if len(tail) == 2 and len(contributions) >= quad.time_levels:
        rho = tail[1] / tail[0]
        if rho >= 1.0:
            raise AccuracyError("time refinement not converging",
                                last=total, previous=total - contributions[-1])
        total += tail[1] * rho / (1.0 - rho)
    return total


def sup_probe(field: SpaceTimeField, probes, gamma: float, rate: float,
              horizon: float, direction: str = "forward",
              quad: QuadraturePolicy = QuadraturePolicy(), anchor_t: float = 0.0):
    """Max of the kernel integral over a finite anchor set.

    Probes are spatial anchors; returns (value, argmax_probe).
    """
    probes = [np.asarray(p, dtype=float) for p in probes]
    if not probes:
        raise ValidationError("probe set must be nonempty")
    best, best_p = -math.inf, None
    for p in probes:
        spec = KernelIntegralSpec(field=field, gamma=gamma, rate=rate,
                                  horizon=horizon, anchor_t=anchor_t,
                                  anchor_x=tuple(p), direction=direction)
        val = kernel_integral(spec, quad)
        if val > best:
            best, best_p = val, p
    return best, best_p


def default_probes(field: SpaceTimeField, scales=(0.3, 1.0)) -> list:
    """Singular points plus small axis-aligned lattice offsets."""
    d = field.dim
    probes = [np.zeros(d)]
    probes += [np.asarray(p, dtype=float) for p in field.singular_points]
    for s in scales:
        for ax in range(d):
            e = np.zeros(d)
            e[ax] = s
            probes.append(e)
    # dedupe
    seen, out = set(), []
    for p in probes:
        key = tuple(np.round(p, 12))
        if key not in seen:
            seen.add(key)
            out.append(p)
    return out


def nlambda(field: SpaceTimeField, horizon: float, lam: float = 1.0,
            probes=None, quad: QuadraturePolicy = QuadraturePolicy(),
            anchor_t: float = 0.0) -> float:
    """N^lambda(T): sup over probes of the gradient-scale kernel integral.

    Uses the exponent convention exp(-lambda |x-y|^2 / (4 s)), i.e. rate
    lambda/2 in the kernel-integral normalization.
    """
    if probes is None:
        probes = default_probes(field)
    val, _ = sup_probe(field, probes, gamma=(field.dim + 1) / 2.0,
                       rate=lam / 2.0, horizon=horizon, direction="forward",
                       quad=quad, anchor_t=anchor_t)
    return val
