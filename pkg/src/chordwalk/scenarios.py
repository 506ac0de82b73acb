"""Built-in (body, density) pairs and discrete test spaces."""
from __future__ import annotations

import numpy as np

from . import density as dens
from .geometry import Ball, Box, ConvexBody, Polytope
from .operator_lab import DiscreteSpace, discrete_space, grid_space

__all__ = ["simplex", "builtin_pairs", "grid_cases", "two_cell_space", "swap_space"]

_RATES = (1.5, -0.8, 0.6)
_MEAN = (0.25, 0.2, 0.15)


def simplex(d: int, scale: float = 1.0) -> Polytope:
    """``{x >= 0, sum(x) <= scale}``."""
    A = np.vstack([-np.eye(d), np.ones((1, d))])
    b = np.concatenate([np.zeros(d), [scale]])
    return Polytope(A, b)


def builtin_pairs(d: int) -> list[tuple[str, ConvexBody, dens.Density]]:
    """The continuous test problems in dimension ``d``: one per density
    variant, spread over the three body variants."""
    box = Box(-np.ones(d), np.ones(d))
    ball = Ball(np.zeros(d), 1.0)
    tri = simplex(d)
    return [
        ("box-uniform", box, dens.uniform()),
        ("box-gaussian", box, dens.gaussian(0.6, d=d)),
        ("ball-exponential", ball, dens.exponential(_RATES[:d], ball)),
        ("simplex-gaussian", tri, dens.gaussian(0.3, _MEAN[:d])),
    ]


def grid_cases(max_side: int = 64) -> list[tuple[str, DiscreteSpace]]:
    """Grid spaces over the unit square for the three built-in densities,
    at sides 8, 16 and up to ``max_side``."""
    box = Box([0.0, 0.0], [1.0, 1.0])
    densities = [
        ("uniform", dens.uniform()),
        ("exponential", dens.exponential([2.0, 1.0], box)),
        ("gaussian", dens.gaussian(0.3, [0.4, 0.6])),
    ]
    sides = [s for s in (8, 16, 64) if s <= max_side]
    return [(f"{name}-{s}x{s}", grid_space(box, rho, (s, s)))
            for s in sides for name, rho in densities]


def two_cell_space() -> DiscreteSpace:
    """Cells ``a, b`` of unit volume with ``rho = (1, 2)``."""
    return discrete_space([1.0, 2.0], labels=["a", "b"])


def swap_space() -> DiscreteSpace:
    return discrete_space([1.0, 1.0], labels=["a", "b"])
