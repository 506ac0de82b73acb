"""Convex bodies and line/body intersection.

Three body variants are supported: axis-aligned boxes, Euclidean balls and
H-polytopes ``{x : A x <= b}``. Each knows its bounding box, a strictly
interior witness point, and the closed-form parameter interval of the chord
``{x + s*theta : s real} & K``.

Point arguments may be a single point of shape ``(d,)`` or a batch of shape
``(m, d)``; batch inputs give batch outputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

__all__ = [
    "Interval", "ConvexBody", "Box", "Ball", "Polytope",
    "contains", "chord_extent", "random_direction", "as_direction",
    "sphere_area", "body_from_spec",
]

# relative slack used by membership so that computed chord endpoints are members
MEMBERSHIP_TOL = 1e-12


@dataclass(frozen=True)
class Interval:
    s_min: float
    s_max: float

    def __post_init__(self):
        if not self.s_min <= self.s_max:
            raise ValueError(f"empty interval [{self.s_min}, {self.s_max}]")

    @property
    def length(self) -> float:
        return self.s_max - self.s_min

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.s_min) and math.isfinite(self.s_max)

    def reflected(self) -> "Interval":
        return Interval(-self.s_max, -self.s_min)


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d (the normalizer of the
    direction average in the hit-and-run operator)."""
    return 2.0 * math.pi ** (d / 2) / special.gamma(d / 2)


def as_direction(theta, d: int | None = None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if d is not None and theta.shape[-1] != d:
        raise ValueError(f"direction has dimension {theta.shape[-1]}, expected {d}")
    norms = np.linalg.norm(theta, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-12):
        raise ValueError("direction must have unit Euclidean norm")
    return theta


def random_direction(rng: np.random.Generator, d: int, size: int | None = None) -> np.ndarray:
    """Uniform direction(s) on the unit sphere S^{d-1}.

    Normalizes a vector of ``d`` independent standard normals. With ``size``
    given, returns an array of shape ``(size, d)``.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    shape = (d,) if size is None else (size, d)
    while True:
        z = rng.standard_normal(shape)
        norms = np.linalg.norm(z, axis=-1, keepdims=True)
        # a zero vector has probability 0, but redraw rather than divide by it
        if np.all(norms > 0):
            return z / norms


class ConvexBody:
    """Common interface for the body variants."""

    dimension: int
    lower: np.ndarray
    upper: np.ndarray
    witness: np.ndarray

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lower, self.upper

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dimension:
            raise ValueError(
                f"point has dimension {x.shape[-1] if x.ndim else 0}, body has {self.dimension}")
        return x

    def contains(self, x) -> bool | np.ndarray:
        x = self._check_dim(x)
        out = self._contains(np.atleast_2d(x))
        return bool(out[0]) if x.ndim == 1 else out

    def chord_extent(self, x, theta) -> Interval:
        """Parameter interval of the chord through ``x`` in direction ``theta``."""
        x = self._check_dim(x)
        theta = as_direction(theta, self.dimension)
        if x.ndim != 1:
            raise ValueError("chord_extent takes a single point; use extents() for batches")
        if not self.contains(x):
            raise ValueError(f"point {x} is outside the body")
        lo, hi = self.extents(x[None, :], theta[None, :])
        return Interval(float(min(lo[0], 0.0)), float(max(hi[0], 0.0)))

    def extents(self, X: np.ndarray, Theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batch chord extents, no membership check. ``X``, ``Theta``: (m, d)."""
        raise NotImplementedError

    def _contains(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_spec(self) -> dict:
        raise NotImplementedError

    def sample_bounding_box(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random((size, self.dimension))


@dataclass(frozen=True, eq=False)
class Box(ConvexBody):
    lower: np.ndarray
    upper: np.ndarray
    dimension: int = field(init=False)
    witness: np.ndarray = field(init=False)

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).ravel()
        upper = np.asarray(self.upper, dtype=float).ravel()
        if lower.shape != upper.shape or lower.size == 0:
            raise ValueError("box bounds must be non-empty vectors of equal length")
        if not np.all(np.isfinite(lower)) or not np.all(np.isfinite(upper)):
            raise ValueError("box bounds must be finite")
        if np.any(upper <= lower):
            raise ValueError("box must have non-empty interior (upper > lower)")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "dimension", lower.size)
        object.__setattr__(self, "witness", 0.5 * (lower + upper))

    def _contains(self, X):
        scale = MEMBERSHIP_TOL * np.maximum(1.0, np.maximum(np.abs(self.lower), np.abs(self.upper)))
        return np.all((X >= self.lower - scale) & (X <= self.upper + scale), axis=-1)

    def extents(self, X, Theta):
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = (self.lower - X) / Theta
            r2 = (self.upper - X) / Theta
        lo = np.where(Theta != 0, np.minimum(r1, r2), -np.inf)
        hi = np.where(Theta != 0, np.maximum(r1, r2), np.inf)
        return lo.max(axis=-1), hi.min(axis=-1)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def to_spec(self):
        return {"type": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class Ball(ConvexBody):
    center: np.ndarray
    radius: float
    dimension: int = field(init=False)
    lower: np.ndarray = field(init=False)
    upper: np.ndarray = field(init=False)
    witness: np.ndarray = field(init=False)

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).ravel()
        if center.size == 0 or not np.all(np.isfinite(center)):
            raise ValueError("ball center must be a finite non-empty vector")
        if not self.radius > 0 or not math.isfinite(self.radius):
            raise ValueError("ball radius must be positive and finite")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "dimension", center.size)
        object.__setattr__(self, "lower", center - self.radius)
        object.__setattr__(self, "upper", center + self.radius)
        object.__setattr__(self, "witness", center.copy())

    def _contains(self, X):
        r2 = np.sum((X - self.center) ** 2, axis=-1)
        return r2 <= self.radius ** 2 * (1.0 + 2 * MEMBERSHIP_TOL)

    def extents(self, X, Theta):
        # |y + s*theta|^2 = r^2 with y = x - c:  s^2 + 2*b*s + c0 = 0
        y = X - self.center
        b = np.sum(y * Theta, axis=-1)
        c0 = np.sum(y * y, axis=-1) - self.radius ** 2
        disc = np.sqrt(np.maximum(b * b - c0, 0.0))
        # stable root pair: q = -(b + sign(b)*disc), roots q and c0/q
        q = -(b + np.copysign(disc, b))
        with np.errstate(divide="ignore", invalid="ignore"):
            other = np.where(q != 0, c0 / q, 0.0)
        return np.minimum(q, other), np.maximum(q, other)

    @property
    def volume(self) -> float:
        d = self.dimension
        return math.pi ** (d / 2) / special.gamma(d / 2 + 1) * self.radius ** d

    def to_spec(self):
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Polytope(ConvexBody):
    """Bounded H-polytope ``{x : A x <= b}``.

    Rows are normalized to unit length internally; the bounding box and the
    interior witness (Chebyshev center) come from linear programs.
    """

    A: np.ndarray
    b: np.ndarray
    dimension: int = field(init=False)
    lower: np.ndarray = field(init=False)
    upper: np.ndarray = field(init=False)
    witness: np.ndarray = field(init=False)
    _An: np.ndarray = field(init=False, repr=False)
    _bn: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if A.shape[0] != b.size:
            raise ValueError(f"A has {A.shape[0]} rows but b has {b.size} entries")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0):
            raise ValueError("polytope constraint rows must be non-zero")
        d = A.shape[1]
        An, bn = A / norms[:, None], b / norms
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "dimension", d)
        object.__setattr__(self, "_An", An)
        object.__setattr__(self, "_bn", bn)

        # Chebyshev center: max r s.t. a_i.x + r <= b_i (rows unit-norm)
        c = np.zeros(d + 1)
        c[-1] = -1.0
        res = optimize.linprog(c, A_ub=np.hstack([An, np.ones((len(bn), 1))]), b_ub=bn,
                               bounds=[(None, None)] * d + [(0, None)], method="highs")
        if res.status == 3:
            raise ValueError("polytope is unbounded")
        if res.status != 0 or res.x[-1] <= 1e-12:
            raise ValueError("polytope has empty interior")
        object.__setattr__(self, "witness", res.x[:d])

        lower, upper = np.empty(d), np.empty(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            for sign, target in ((1.0, lower), (-1.0, upper)):
                r = optimize.linprog(sign * e, A_ub=An, b_ub=bn,
                                     bounds=[(None, None)] * d, method="highs")
                if r.status != 0:
                    raise ValueError("polytope is unbounded")
                target[i] = r.x[i]
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def _contains(self, X):
        slack = MEMBERSHIP_TOL * np.maximum(1.0, np.abs(self._bn))
        return np.all(X @ self._An.T <= self._bn + slack, axis=-1)

    def extents(self, X, Theta):
        rate = Theta @ self._An.T              # (m, k): a_i . theta
        room = self._bn - X @ self._An.T        # (m, k): b_i - a_i . x
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = room / rate
        hi = np.where(rate > 0, ratio, np.inf).min(axis=-1)
        lo = np.where(rate < 0, ratio, -np.inf).max(axis=-1)
        return lo, hi

    def to_spec(self):
        return {"type": "polytope", "A": self.A.tolist(), "b": self.b.tolist()}


def contains(body: ConvexBody, x) -> bool | np.ndarray:
    return body.contains(x)


def chord_extent(body: ConvexBody, x, theta) -> Interval:
    return body.chord_extent(x, theta)


def body_from_spec(spec: dict) -> ConvexBody:
    """Build a body from its tagged-record form, e.g.
    ``{"type": "ball", "center": [0, 0], "radius": 1}``."""
    kind = spec.get("type")
    if kind == "box":
        return Box(spec["lower"], spec["upper"])
    if kind == "ball":
        return Ball(spec["center"], spec["radius"])
    if kind == "polytope":
        return Polytope(spec["A"], spec["b"])
    raise ValueError(f"unknown body type {kind!r}")
