"""Unnormalized densities on convex bodies and their restriction to chords.

A :class:`Density` evaluates ``rho`` on points (vectorized over leading
axes). Built-in variants also carry the closed-form law of ``rho`` restricted
to a line, which the samplers use in batch. Every density, built-in or
custom, can be restricted to a chord by adaptive Simpson quadrature
(:func:`chord_weight`) and sampled by inverting the tabulated CDF
(:func:`sample_chord`).
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, special

from .geometry import Ball, Box, ConvexBody, Interval, Polytope, as_direction

__all__ = [
    "Density", "ChordSlice", "uniform", "exponential", "gaussian", "custom",
    "density_from_spec", "chord_weight", "sample_chord", "in_level_set",
    "line_weights", "line_samples", "WEIGHT_FLOOR",
]

log = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-300
INITIAL_NODES = 65
PANEL_RTOL = 1e-10
MAX_REFINE_LEVELS = 40
SAMPLE_STOL = 1e-10


@dataclass(frozen=True, eq=False)
class Density:
    """Unnormalized density ``rho``.

    ``evaluator`` maps an array of shape ``(..., d)`` to shape ``(...)``.
    ``kind`` is one of ``uniform``, ``product-exponential``,
    ``truncated-gaussian`` or ``custom``; ``params`` keeps the constructor
    arguments for serialization.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    sup_bound: float
    kind: str
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.evaluator(x), dtype=float)
        return float(out) if x.ndim == 1 else out

    @property
    def has_closed_form(self) -> bool:
        return self.kind != "custom"

    def to_spec(self) -> dict:
        if self.kind == "custom":
            raise ValueError("custom densities have no config representation")
        tag = {"uniform": "uniform", "product-exponential": "exponential",
               "truncated-gaussian": "gaussian"}[self.kind]
        return {"type": tag, **self.params}


def uniform() -> Density:
    return Density(lambda x: np.ones(np.shape(x)[:-1]), 1.0, "uniform")


def _min_linear(body: ConvexBody, c: np.ndarray) -> float:
    """min over the body of c.x"""
    if isinstance(body, Box):
        return float(np.sum(np.where(c > 0, c * body.lower, c * body.upper)))
    if isinstance(body, Ball):
        return float(c @ body.center - body.radius * np.linalg.norm(c))
    if isinstance(body, Polytope):
        res = optimize.linprog(c, A_ub=body.A, b_ub=body.b,
                               bounds=[(None, None)] * body.dimension, method="highs")
        return float(res.fun)
    raise TypeError(f"unsupported body {type(body).__name__}")


def exponential(rate, body: ConvexBody) -> Density:
    """``rho(x) = exp(-rate . x)``; the sup bound is exact over ``body``."""
    rate = np.asarray(rate, dtype=float).ravel()
    if rate.size != body.dimension:
        raise ValueError(f"rate has length {rate.size}, body has dimension {body.dimension}")
    sup = math.exp(-_min_linear(body, rate))
    return Density(lambda x: np.exp(-(np.asarray(x) @ rate)), sup,
                   "product-exponential", {"rate": rate.tolist()})


def gaussian(sigma: float, mean=None, d: int | None = None) -> Density:
    """Isotropic Gaussian bump ``exp(-|x - mean|^2 / (2 sigma^2))``, truncated
    to whatever body it is used with. ``mean`` defaults to the origin."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if mean is None:
        if d is None:
            mean_arr = None
        else:
            mean_arr = np.zeros(d)
    else:
        mean_arr = np.asarray(mean, dtype=float).ravel()
    inv = 1.0 / (2.0 * sigma * sigma)

    def rho(x):
        x = np.asarray(x, dtype=float)
        m = 0.0 if mean_arr is None else mean_arr
        return np.exp(-np.sum((x - m) ** 2, axis=-1) * inv)

    params = {"sigma": float(sigma)}
    if mean_arr is not None and np.any(mean_arr != 0):
        params["mean"] = mean_arr.tolist()
    return Density(rho, 1.0, "truncated-gaussian", params)


def custom(fn: Callable, sup_bound: float, body: ConvexBody | None = None, *,
           vectorized: bool = False, rng: np.random.Generator | None = None,
           n_check: int = 10_000) -> Density:
    """Wrap a user density.

    ``fn`` takes one point unless ``vectorized``. When ``body`` is given,
    ``sup_bound`` is spot-checked on ``n_check`` uniform points of the
    bounding box; a violation warns but does not fail.
    """
    if vectorized:
        evaluator = fn
    else:
        def evaluator(x):
            x = np.asarray(x, dtype=float)
            flat = x.reshape(-1, x.shape[-1])
            return np.fromiter((fn(p) for p in flat), float, len(flat)).reshape(x.shape[:-1])
    dens = Density(evaluator, float(sup_bound), "custom")
    if body is not None:
        rng = np.random.default_rng(0) if rng is None else rng
        pts = body.sample_bounding_box(rng, n_check)
        pts = pts[body.contains(pts)]
        if len(pts):
            vals = dens.evaluator(pts)
            if np.any(vals < 0):
                raise ValueError("density takes negative values on the body")
            if np.max(vals) > sup_bound:
                warnings.warn(f"sup_bound {sup_bound} is exceeded on the body "
                              f"(observed {np.max(vals):.6g})", RuntimeWarning, stacklevel=2)
    return dens


def density_from_spec(spec: dict, body: ConvexBody) -> Density:
    kind = spec.get("type")
    if kind == "uniform":
        return uniform()
    if kind == "exponential":
        return exponential(spec["rate"], body)
    if kind == "gaussian":
        return gaussian(spec["sigma"], spec.get("mean"), d=body.dimension)
    raise ValueError(f"unknown density type {kind!r}")


def in_level_set(density: Density, body: ConvexBody, t: float, x) -> bool:
    """Membership in ``K(t) = {x in K : rho(x) >= t}`` for ``t > 0``."""
    if not t > 0:
        raise ValueError("level must be positive")
    return bool(body.contains(x)) and density(x) >= t


# ---------------------------------------------------------------------------
# closed-form line laws of the built-in densities (batch)

def _truncexp_offsets(k, length, u):
    """Offset in [0, length] with density proportional to exp(-k*t), k >= 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -np.log1p(u * np.expm1(-k * length)) / k
    return np.where(k * length < 1e-300, u * length, np.clip(t, 0.0, length))


def line_weights(density: Density, X, Theta, lo, hi) -> np.ndarray:
    """Closed-form ``int_lo^hi rho(x + s theta) ds`` for each row."""
    if density.kind == "uniform":
        return hi - lo
    if density.kind == "product-exponential":
        rate = np.asarray(density.params["rate"])
        c = Theta @ rate
        base = density.evaluator(X)
        L = hi - lo
        # int_lo^hi e^{-c s} ds = e^{-c lo} * (1 - e^{-c L}) / c
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            integral = np.where(np.abs(c) * L < 1e-300, L,
                                -np.exp(-c * lo) * np.expm1(-c * L) / c)
        return base * integral
    if density.kind == "truncated-gaussian":
        sigma = density.params["sigma"]
        mean = np.asarray(density.params.get("mean", 0.0))
        y = X - mean
        s0 = -np.sum(y * Theta, axis=-1)
        perp2 = np.sum(y * y, axis=-1) - s0 * s0
        a, b = (lo - s0) / sigma, (hi - s0) / sigma
        # ndtr(b) - ndtr(a) computed on the side of the smaller tail
        flip = a + b > 0
        a, b = np.where(flip, -b, a), np.where(flip, -a, b)
        mass = special.ndtr(b) - special.ndtr(a)
        return np.exp(-np.maximum(perp2, 0.0) / (2 * sigma * sigma)) * sigma * math.sqrt(2 * math.pi) * mass
    raise ValueError(f"no closed-form line law for {density.kind!r} densities")


def line_samples(density: Density, X, Theta, lo, hi, u) -> np.ndarray:
    """Closed-form inverse-CDF draw of ``s`` on ``[lo, hi]`` given uniforms ``u``."""
    L = hi - lo
    if density.kind == "uniform":
        return lo + u * L
    if density.kind == "product-exponential":
        c = Theta @ np.asarray(density.params["rate"])
        # mass piles up at hi when c < 0: invert from that end at 1 - u
        t = _truncexp_offsets(np.abs(c), L, np.where(c >= 0, u, 1.0 - u))
        return np.where(c >= 0, lo + t, hi - t)
    if density.kind == "truncated-gaussian":
        sigma = density.params["sigma"]
        mean = np.asarray(density.params.get("mean", 0.0))
        s0 = -np.sum((X - mean) * Theta, axis=-1)
        a, b = (lo - s0) / sigma, (hi - s0) / sigma
        flip = a + b > 0
        a, b = np.where(flip, -b, a), np.where(flip, -a, b)
        uu = np.where(flip, 1.0 - u, u)
        la, lb = special.log_ndtr(a), special.log_ndtr(b)
        logp = la + np.log1p(uu * np.expm1(lb - la))
        z = special.ndtri_exp(np.minimum(logp, 0.0))
        z = np.where(flip, -z, z)
        return np.clip(s0 + sigma * z, lo, hi)
    raise ValueError(f"no closed-form line law for {density.kind!r} densities")


# ---------------------------------------------------------------------------
# quadrature path (any density)

@dataclass(frozen=True, eq=False)
class ChordSlice:
    """The chord ``L(x, theta)`` with its weight and a tabulated CDF.

    ``nodes``/``cdf`` hold the cumulative integral of ``rho(x + s theta)``
    at Simpson panel endpoints and midpoints.
    """

    origin: np.ndarray
    direction: np.ndarray
    interval: Interval
    weight: float
    nodes: np.ndarray
    cdf: np.ndarray
    line_density: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    @property
    def cdf_table(self) -> np.ndarray:
        return np.column_stack([self.nodes, self.cdf])

    def point(self, s: float) -> np.ndarray:
        return self.origin + s * self.direction


def _simpson(fa, fm, fb, h):
    return h / 6.0 * (fa + 4.0 * fm + fb)


def chord_weight(density: Density, body: ConvexBody, x, theta) -> ChordSlice:
    """Restrict ``density`` to the chord through ``x`` along ``theta``.

    The weight is integrated by adaptive composite Simpson: 32 initial
    panels (65 nodes), each bisected until its error estimate falls below
    ``1e-10`` times the running total.
    """
    x = np.asarray(x, dtype=float)
    theta = as_direction(theta, body.dimension)
    interval = body.chord_extent(x, theta)
    if not interval.bounded:
        raise ValueError("chord is unbounded")

    def f(s):
        s = np.asarray(s, dtype=float)
        return density.evaluator(x + s[..., None] * theta)

    a, b = interval.s_min, interval.s_max
    edges = np.linspace(a, b, INITIAL_NODES)[::2]
    left, right = edges[:-1], edges[1:]
    accepted = []  # (left, right, f at 5 nodes)
    for _ in range(MAX_REFINE_LEVELS):
        h = right - left
        pts = left[:, None] + h[:, None] * np.linspace(0.0, 1.0, 5)
        fv = f(pts)
        coarse = _simpson(fv[:, 0], fv[:, 2], fv[:, 4], h)
        fine = _simpson(fv[:, 0], fv[:, 1], fv[:, 2], h / 2) + _simpson(fv[:, 2], fv[:, 3], fv[:, 4], h / 2)
        done_total = sum(float(np.sum(_panel_total(p))) for p in accepted)
        total = abs(done_total + float(np.sum(fine)))
        ok = np.abs(fine - coarse) / 15.0 <= PANEL_RTOL * total
        if not np.any(~ok):
            accepted.append((left, right, fv))
            break
        accepted.append((left[ok], right[ok], fv[ok]))
        mid = 0.5 * (left[~ok] + right[~ok])
        left, right = np.concatenate([left[~ok], mid]), np.concatenate([mid, right[~ok]])
    else:
        log.warning("chord quadrature hit the refinement limit; accepting current panels")
        h = right - left
        pts = left[:, None] + h[:, None] * np.linspace(0.0, 1.0, 5)
        accepted.append((left, right, f(pts)))

    lefts = np.concatenate([p[0] for p in accepted])
    rights = np.concatenate([p[1] for p in accepted])
    fvals = np.concatenate([p[2] for p in accepted])
    order = np.argsort(lefts)
    lefts, rights, fvals = lefts[order], rights[order], fvals[order]
    h = rights - lefts
    half1 = _simpson(fvals[:, 0], fvals[:, 1], fvals[:, 2], h / 2)
    half2 = _simpson(fvals[:, 2], fvals[:, 3], fvals[:, 4], h / 2)
    pieces = np.column_stack([half1, half2]).ravel()
    nodes = np.empty(2 * len(lefts) + 1)
    nodes[0:-1:2] = lefts
    nodes[1::2] = 0.5 * (lefts + rights)
    nodes[-1] = rights[-1]
    cdf = np.concatenate([[0.0], np.cumsum(pieces)])
    cdf = np.maximum.accumulate(cdf)
    weight = float(cdf[-1])
    if not weight > WEIGHT_FLOOR:
        raise ValueError(f"chord weight {weight:.3g} underflows; density vanishes on the chord")
    return ChordSlice(x, theta, interval, weight, nodes, cdf, f)


def _panel_total(panel):
    left, right, fv = panel
    h = right - left
    return _simpson(fv[:, 0], fv[:, 1], fv[:, 2], h / 2) + _simpson(fv[:, 2], fv[:, 3], fv[:, 4], h / 2)


def sample_chord(chord: ChordSlice, rng: np.random.Generator) -> np.ndarray:
    """Draw a point on the chord with law proportional to ``rho``.

    Inverts the tabulated CDF: bisection locates the bracketing nodes, then
    a root solve on the local Simpson integral pins ``s`` to 1e-10.
    """
    target = rng.random() * chord.weight
    k = int(np.searchsorted(chord.cdf, target, side="right")) - 1
    k = min(max(k, 0), len(chord.nodes) - 2)
    s0, s1 = chord.nodes[k], chord.nodes[k + 1]
    need = target - chord.cdf[k]
    f0 = float(chord.line_density(s0))

    def g(s):
        fm, fs = chord.line_density(np.array([0.5 * (s0 + s), s]))
        return _simpson(f0, fm, fs, s - s0) - need

    g1 = g(s1)
    if need <= 0.0 or s1 == s0:
        s = s0
    elif g1 <= 0.0:
        s = s1
    else:
        s = optimize.brentq(g, s0, s1, xtol=SAMPLE_STOL, rtol=4 * np.finfo(float).eps)
    return chord.point(s)
