"""Exact transition matrices for the four samplers on finite state spaces.

A :class:`DiscreteSpace` is a finite set of cells with volumes and density
values; its stationary weights are ``pi_i ~ rho_i * vol_i``. Builders here
assemble

* chord-mixture kernels (Gibbs along grid axes, hit-and-run along a finite
  set of lattice directions), together with the averaging map ``M`` and the
  chord conditional-expectation ``T`` on (cell, direction) pairs;
* the simple slice sampler by exact decomposition over the distinct density
  levels, together with its (cell, level) factorization;
* Metropolis kernels, both from the acceptance-ratio formula and from the
  level decomposition with the proposal-induced level kernels.

``T`` matrices are stored sparse because the auxiliary spaces are several
times larger than the cell space; transition matrices are dense.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, reduce
from itertools import combinations, product
from typing import Sequence

import numpy as np
from scipy import sparse

from .density import Density
from .geometry import ConvexBody

__all__ = [
    "DiscreteSpace", "GridInfo", "TransitionMatrix", "OperatorFactorization",
    "FactorizationReport", "discrete_space", "grid_space", "random_space",
    "direction_set", "build_gibbs_matrix", "build_hit_and_run_matrix",
    "build_slice_matrix", "slice_factorization", "level_kernels",
    "build_metropolis_matrix", "build_metropolis_via_slice",
    "independent_uniform_proposal", "ball_walk_proposal", "swap_proposal",
    "lazy_matrix", "verify_factorization", "check_detailed_balance",
    "check_stochastic", "stationarity_residual", "level_decomposition_check",
    "adjoint_trials", "export_csv", "export_json",
]

CLAMP = 1e-15
DEFAULT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GridInfo:
    shape: tuple[int, ...]
    index: np.ndarray        # (n, d) integer multi-index of each retained cell
    lower: np.ndarray
    upper: np.ndarray

    @property
    def widths(self) -> np.ndarray:
        return (self.upper - self.lower) / np.asarray(self.shape)

    @property
    def centers(self) -> np.ndarray:
        return self.lower + (self.index + 0.5) * self.widths

    @property
    def dimension(self) -> int:
        return len(self.shape)


@dataclass(frozen=True, eq=False)
class DiscreteSpace:
    rho: np.ndarray
    volume: np.ndarray
    labels: list | None = None
    grid: GridInfo | None = None

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float).ravel()
        vol = np.asarray(self.volume, dtype=float).ravel()
        if rho.shape != vol.shape or rho.size == 0:
            raise ValueError("rho and volume must be non-empty vectors of equal length")
        if np.any(rho < 0) or not np.any(rho > 0):
            raise ValueError("rho must be non-negative with at least one positive entry")
        if np.any(vol <= 0):
            raise ValueError("cell volumes must be positive")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "volume", vol)

    @property
    def n(self) -> int:
        return self.rho.size

    @cached_property
    def pi(self) -> np.ndarray:
        w = self.rho * self.volume
        return w / w.sum()

    @cached_property
    def uniform_weights(self) -> np.ndarray:
        """Cell weights of the uniform distribution on the space (``U_0``)."""
        return self.volume / self.volume.sum()


def discrete_space(rho: Sequence[float], volume: Sequence[float] | None = None,
                   labels: list | None = None) -> DiscreteSpace:
    rho = np.asarray(rho, dtype=float)
    vol = np.ones_like(rho) if volume is None else volume
    return DiscreteSpace(rho, vol, labels)


def random_space(rng: np.random.Generator, n: int, ties: bool = False) -> DiscreteSpace:
    """Random weighted space; with ``ties`` the density takes few distinct values."""
    rho = rng.integers(1, 6, n).astype(float) if ties else rng.uniform(0.05, 3.0, n)
    vol = rng.uniform(0.2, 2.0, n)
    return DiscreteSpace(rho, vol)


def grid_space(body: ConvexBody, density: Density, resolution) -> DiscreteSpace:
    """Midpoint discretization over the body's bounding box.

    A cell is kept iff its center lies in the body and has positive density;
    ``rho`` is evaluated at the center.
    """
    d = body.dimension
    shape = (int(resolution),) * d if np.isscalar(resolution) else tuple(int(r) for r in resolution)
    if len(shape) != d or min(shape) < 1:
        raise ValueError(f"resolution must give {d} positive cell counts")
    lower, upper = body.bounding_box
    index = np.array(list(np.ndindex(*shape)), dtype=np.int64).reshape(-1, d)
    widths = (upper - lower) / np.asarray(shape)
    centers = lower + (index + 0.5) * widths
    rho = np.asarray(density.evaluator(centers), dtype=float)
    keep = body.contains(centers) & (rho > 0)
    if not np.any(keep):
        raise ValueError("every grid cell has zero density")
    grid = GridInfo(shape, index[keep], lower.copy(), upper.copy())
    vol = np.full(int(keep.sum()), float(np.prod(widths)))
    return DiscreteSpace(rho[keep], vol, [tuple(i) for i in index[keep]], grid)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    entries: np.ndarray
    space: DiscreteSpace
    name: str = ""

    def __post_init__(self):
        P = np.array(self.entries, dtype=float)
        if P.shape != (self.space.n, self.space.n):
            raise ValueError(f"matrix shape {P.shape} does not match space size {self.space.n}")
        object.__setattr__(self, "entries", P)

    @property
    def pi(self) -> np.ndarray:
        return self.space.pi

    @property
    def n(self) -> int:
        return self.space.n

    def perturbed(self, i: int = 0, j: int = 1, eps: float = 1e-3) -> "TransitionMatrix":
        P = self.entries.copy()
        P[i, j] += eps
        return TransitionMatrix(P, self.space, self.name + "+perturbed")


def _finalize(P: np.ndarray, space: DiscreteSpace, name: str) -> TransitionMatrix:
    P[np.abs(P) < CLAMP] = 0.0
    return TransitionMatrix(P, space, name)


def lazy_matrix(P: TransitionMatrix) -> TransitionMatrix:
    """``(I + P) / 2``."""
    return TransitionMatrix(0.5 * (np.eye(P.n) + P.entries), P.space, "lazy:" + P.name)


# ---------------------------------------------------------------------------
# factorization container

@dataclass(frozen=True, eq=False)
class OperatorFactorization:
    """``P = M T M*`` on an auxiliary space of ``k`` pairs.

    ``M`` is ``n x k`` (average over the auxiliary coordinate), ``T`` is
    ``k x k``, ``mu`` the auxiliary weights, and ``lift`` the closed form of
    the adjoint ``M*``: it copies ``f(x)`` to every pair ``(x, .)``.
    """

    M: sparse.csr_array
    T: sparse.csr_array
    mu: np.ndarray
    lift: sparse.csr_array
    pi: np.ndarray
    pairs: np.ndarray  # (k, 2): cell index, direction or level index

    @property
    def k(self) -> int:
        return self.mu.size

    def adjoint(self) -> sparse.csr_array:
        """``M*`` computed from the definition: ``D_mu^-1 M^T D_pi``."""
        return sparse.csr_array(sparse.diags_array(1.0 / self.mu) @ self.M.T @ sparse.diags_array(self.pi))

    def product(self) -> np.ndarray:
        return (self.M @ self.T @ self.adjoint()).toarray()


def _max_abs(A) -> float:
    if sparse.issparse(A):
        A = sparse.csr_array(A)
        return float(np.max(np.abs(A.data))) if A.nnz else 0.0
    return float(np.max(np.abs(A))) if np.size(A) else 0.0


def _pair_factorization(pi, blocks, n_dirs, weights=None):
    """Factorization for a mixture of chord projections.

    ``blocks[a]`` lists the chords (arrays of cell indices) for direction
    ``a``; pair ``(i, a)`` has auxiliary index ``a * n + i``.
    """
    n = pi.size
    weights = np.full(n_dirs, 1.0 / n_dirs) if weights is None else np.asarray(weights)
    rows, cols, vals = [], [], []
    for a, chords in enumerate(blocks):
        for cells in chords:
            mass = pi[cells].sum()
            r, c = np.meshgrid(cells, cells, indexing="ij")
            rows.append((a * n + r).ravel())
            cols.append((a * n + c).ravel())
            vals.append(np.broadcast_to(pi[cells] / mass, r.shape).ravel())
    k = n * n_dirs
    T = sparse.csr_array((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(k, k))
    aux = np.arange(k)
    cell_of = aux % n
    M = sparse.csr_array((weights[aux // n], (cell_of, aux)), shape=(n, k))
    lift = sparse.csr_array((np.ones(k), (aux, cell_of)), shape=(k, n))
    mu = np.tile(pi, n_dirs) * np.repeat(weights, n)
    pairs = np.column_stack([cell_of, aux // n])
    return OperatorFactorization(M, T, mu, lift, pi, pairs)


# ---------------------------------------------------------------------------
# Gibbs and hit-and-run

def _require_grid(space: DiscreteSpace) -> GridInfo:
    if space.grid is None:
        raise ValueError("this builder needs a grid space")
    return space.grid


def _axis_lines(grid: GridInfo, axis: int) -> list[np.ndarray]:
    others = np.delete(grid.index, axis, axis=1)
    if others.shape[1] == 0:
        return [np.arange(len(grid.index))]
    _, line_id = np.unique(others, axis=0, return_inverse=True)
    line_id = line_id.ravel()
    order = np.argsort(line_id, kind="stable")
    bounds = np.flatnonzero(np.diff(line_id[order])) + 1
    return np.split(order, bounds)


def build_gibbs_matrix(space: DiscreteSpace) -> tuple[TransitionMatrix, OperatorFactorization]:
    """Random-scan Gibbs kernel on a grid: pick an axis uniformly, resample
    within the retained cells of that axis line proportionally to ``pi``."""
    grid = _require_grid(space)
    d, pi = grid.dimension, space.pi
    P = np.zeros((space.n, space.n))
    blocks = []
    for axis in range(d):
        lines = _axis_lines(grid, axis)
        blocks.append(lines)
        for cells in lines:
            P[np.ix_(cells, cells)] += (pi[cells] / pi[cells].sum())[None, :] / d
    return _finalize(P, space, "gibbs"), _pair_factorization(pi, blocks, d)


def direction_set(name_or_vectors, d: int, widths: np.ndarray | None = None) -> list[np.ndarray]:
    """Integer lattice steps for a direction set.

    ``"axes"`` gives the unit steps; ``"axes+diagonals"`` adds ``e_i + e_j``
    and ``e_i - e_j`` for every pair of axes. An explicit list may hold
    integer steps or real unit directions; real directions are converted to
    the lattice via the cell ``widths`` and rejected when no small integer
    step matches.
    """
    if isinstance(name_or_vectors, str):
        eye = np.eye(d, dtype=np.int64)
        vecs = list(eye)
        if name_or_vectors == "axes":
            pass
        elif name_or_vectors == "axes+diagonals":
            for i, j in combinations(range(d), 2):
                vecs += [eye[i] + eye[j], eye[i] - eye[j]]
        else:
            raise ValueError(f"unknown direction set {name_or_vectors!r}")
        return vecs
    widths = np.ones(d) if widths is None else np.asarray(widths, dtype=float)
    return [_lattice_step(np.asarray(v), widths) for v in name_or_vectors]


def _lattice_step(v: np.ndarray, widths: np.ndarray) -> np.ndarray:
    if v.shape != widths.shape:
        raise ValueError(f"direction {v.tolist()} has wrong dimension")
    if np.issubdtype(v.dtype, np.integer):
        step = v.astype(np.int64)
    else:
        w = v / widths
        nz = np.abs(w) > 1e-12 * np.max(np.abs(w))
        if not np.any(nz):
            raise ValueError("zero direction")
        w = np.where(nz, w / np.min(np.abs(w[nz])), 0.0)
        fracs = [Fraction(float(x)).limit_denominator(64) for x in w]
        if any(abs(float(f) - x) > 1e-9 * max(1.0, abs(x)) for f, x in zip(fracs, w)):
            raise ValueError(f"direction {v.tolist()} is not lattice-compatible with the grid")
        denom = reduce(math.lcm, (f.denominator for f in fracs), 1)
        step = np.array([int(f * denom) for f in fracs], dtype=np.int64)
    if not np.any(step):
        raise ValueError("zero direction")
    g = reduce(math.gcd, (abs(int(x)) for x in step))
    return step // g


def _lattice_chords(grid: GridInfo, step: np.ndarray) -> list[np.ndarray]:
    """Group retained cells into lattice lines ``{p + t * step}``."""
    r = int(np.flatnonzero(step)[0])
    q = np.floor_divide(grid.index[:, r], step[r])
    rep = grid.index - q[:, None] * step[None, :]
    _, line_id = np.unique(rep, axis=0, return_inverse=True)
    line_id = line_id.ravel()
    order = np.argsort(line_id, kind="stable")
    return np.split(order, np.flatnonzero(np.diff(line_id[order])) + 1)


def build_hit_and_run_matrix(space: DiscreteSpace, directions="axes+diagonals"
                             ) -> tuple[TransitionMatrix, OperatorFactorization]:
    """Hit-and-run with a finite set of lattice directions, chosen uniformly.

    Cells on one lattice line form a chord; the next state is drawn from the
    chord proportionally to ``pi``.
    """
    grid = _require_grid(space)
    steps = direction_set(directions, grid.dimension, grid.widths)
    pi = space.pi
    n = space.n
    P = np.zeros((n, n))
    blocks = []
    for step in steps:
        chords = _lattice_chords(grid, step)
        blocks.append(chords)
        chord_of = np.empty(n, dtype=np.int64)
        mass = np.empty(len(chords))
        for c, cells in enumerate(chords):
            chord_of[cells] = c
            mass[c] = pi[cells].sum()
        same = chord_of[:, None] == chord_of[None, :]
        P += np.where(same, pi[None, :] / mass[chord_of][:, None], 0.0) / len(steps)
    return _finalize(P, space, "hit-and-run"), _pair_factorization(pi, blocks, len(steps))


# ---------------------------------------------------------------------------
# slice sampler and Metropolis

def _levels(space: DiscreteSpace):
    """Distinct positive density values, the level index of each cell, the
    band widths and the volume of each level set ``{rho >= t_l}``."""
    levels = np.unique(space.rho[space.rho > 0])
    widths = np.diff(np.concatenate([[0.0], levels]))
    level_of = np.searchsorted(levels, space.rho)
    per_level = np.bincount(level_of, weights=space.volume, minlength=levels.size)
    level_volume = np.cumsum(per_level[::-1])[::-1]
    return levels, level_of, widths, level_volume


def _require_positive(space):
    if np.any(space.rho <= 0):
        raise ValueError("slice and Metropolis kernels need rho > 0 on every cell")


def build_slice_matrix(space: DiscreteSpace) -> TransitionMatrix:
    """Simple slice sampler: level ``t ~ U(0, rho_i]``, then a cell drawn
    uniformly (volume-weighted) from ``{rho >= t}``."""
    _require_positive(space)
    _, level_of, widths, level_volume = _levels(space)
    # C[l] = sum over bands l' <= l of width / vol(K(t_l'))
    C = np.cumsum(widths / level_volume)
    common = np.minimum(level_of[:, None], level_of[None, :])
    P = space.volume[None, :] / space.rho[:, None] * C[common]
    return _finalize(P, space, "slice")


def _check_uniform_reversible(space: DiscreteSpace, B: np.ndarray, tol: float = DEFAULT_TOL):
    B = np.asarray(B, dtype=float)
    if B.shape != (space.n, space.n):
        raise ValueError(f"proposal shape {B.shape} does not match space size {space.n}")
    if np.any(B < -CLAMP) or np.max(np.abs(B.sum(axis=1) - 1.0)) > tol:
        raise ValueError("proposal must be row-stochastic")
    u = space.uniform_weights
    F = u[:, None] * B
    resid = float(np.max(np.abs(F - F.T)))
    if resid > tol:
        raise ValueError(f"proposal is not reversible w.r.t. the uniform distribution "
                         f"(residual {resid:.3g})")
    return B


def level_kernels(space: DiscreteSpace, kernel=None):
    """Per-level kernels ``R_t`` on the level sets.

    ``kernel`` is ``None`` for the uniform distribution on each level set,
    a proposal matrix ``B`` for ``R_t(x, A) = B(x, A & K(t)) + (1 - B(x, K(t))) 1_A(x)``,
    or a callable ``f(cells) -> matrix``. Yields ``(cells, R, width, level)``.
    """
    _require_positive(space)
    levels, level_of, widths, _ = _levels(space)
    if kernel is not None and not callable(kernel):
        B = _check_uniform_reversible(space, kernel)
    for l, t in enumerate(levels):
        cells = np.flatnonzero(level_of >= l)
        if kernel is None:
            vol = space.volume[cells]
            R = np.broadcast_to(vol / vol.sum(), (cells.size, cells.size)).copy()
        elif callable(kernel):
            R = np.asarray(kernel(cells), dtype=float)
        else:
            R = B[np.ix_(cells, cells)].copy()
            R[np.diag_indices_from(R)] += 1.0 - R.sum(axis=1)
        yield cells, R, float(widths[l]), float(t)


def slice_factorization(space: DiscreteSpace, kernel=None, max_pairs: int = 200_000
                        ) -> OperatorFactorization:
    """``R = M T M*`` on (cell, level) pairs ``(i, l)`` with ``t_l <= rho_i``.

    ``mu`` is the uniform distribution on the region under the graph of
    ``rho``: ``mu(i, l) = vol_i * width_l / sum_j vol_j rho_j``.
    """
    _require_positive(space)
    levels, level_of, widths, _ = _levels(space)
    k = int(np.sum(level_of + 1))
    if k > max_pairs:
        raise ValueError(f"auxiliary space has {k} pairs (limit {max_pairs})")
    pair_cell = np.repeat(np.arange(space.n), level_of + 1)
    pair_level = np.concatenate([np.arange(L + 1) for L in level_of])
    aux_index = {(int(i), int(l)): a for a, (i, l) in enumerate(zip(pair_cell, pair_level))}
    rows, cols, vals = [], [], []
    for l, (cells, R, _, _) in enumerate(level_kernels(space, kernel)):
        a = np.array([aux_index[(int(i), l)] for i in cells])
        r, c = np.meshgrid(a, a, indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(R.ravel())
    T = sparse.csr_array((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(k, k))
    T.eliminate_zeros()
    aux = np.arange(k)
    M = sparse.csr_array((widths[pair_level] / space.rho[pair_cell], (pair_cell, aux)), shape=(space.n, k))
    lift = sparse.csr_array((np.ones(k), (aux, pair_cell)), shape=(k, space.n))
    mu = space.volume[pair_cell] * widths[pair_level] / np.sum(space.volume * space.rho)
    return OperatorFactorization(M, T, mu, lift, space.pi, np.column_stack([pair_cell, pair_level]))


def build_metropolis_matrix(space: DiscreteSpace, B) -> TransitionMatrix:
    """Metropolis kernel: ``P_ij = B_ij min(1, rho_j / rho_i)`` off the
    diagonal, the diagonal absorbs the rejected mass."""
    _require_positive(space)
    B = _check_uniform_reversible(space, B)
    alpha = np.minimum(1.0, space.rho[None, :] / space.rho[:, None])
    P = B * alpha
    np.fill_diagonal(P, 0.0)
    P[np.diag_indices_from(P)] = 1.0 - P.sum(axis=1)
    return _finalize(P, space, "metropolis")


def build_metropolis_via_slice(space: DiscreteSpace, B) -> TransitionMatrix:
    """Slice sampler whose level kernels are the ``B``-induced ``R_t``.

    Assembled band by band without reference to acceptance ratios: the
    off-diagonal mass from ``i`` to ``j`` collects ``B_ij`` over all bands
    in which both cells lie in the level set; the diagonal collects
    ``B_ii + 1 - B(i, K(t))`` over the bands below ``rho_i``.
    """
    _require_positive(space)
    B = _check_uniform_reversible(space, B)
    levels, level_of, widths, _ = _levels(space)
    m = levels.size
    band_total = np.cumsum(widths)  # measure of bands 0..l
    common = np.minimum(level_of[:, None], level_of[None, :])
    P = B * band_total[common] / space.rho[:, None]
    np.fill_diagonal(P, 0.0)
    # B(i, K(t_l)) = sum of B_ij over cells j with level >= l
    onehot = sparse.csr_array((np.ones(space.n), (np.arange(space.n), level_of)), shape=(space.n, m))
    per_level = np.asarray((onehot.T @ B.T).T)
    mass_in_level_set = np.cumsum(per_level[:, ::-1], axis=1)[:, ::-1]
    below = np.arange(m)[None, :] <= level_of[:, None]
    stay = np.sum(np.where(below, widths[None, :] * (np.diag(B)[:, None] + 1.0 - mass_in_level_set), 0.0),
                  axis=1)
    P[np.diag_indices_from(P)] = stay / space.rho
    return _finalize(P, space, "metropolis-via-slice")


# ---------------------------------------------------------------------------
# proposals

def independent_uniform_proposal(space: DiscreteSpace) -> np.ndarray:
    """``B(x, .) = U_0``: every row is the uniform (volume) distribution."""
    return np.tile(space.uniform_weights, (space.n, 1))


def ball_walk_proposal(space: DiscreteSpace, radius: float = 1.0, lazy: bool = True) -> np.ndarray:
    """Discrete ball walk on a grid: propose a uniformly chosen lattice offset
    of Euclidean length ``<= radius`` (in cells, zero offset included);
    offsets leaving the space are rejected. ``lazy`` returns ``(I + B) / 2``."""
    grid = _require_grid(space)
    if not np.allclose(space.volume, space.volume[0], rtol=1e-12):
        raise ValueError("ball walk needs equal cell volumes")
    d = grid.dimension
    r = int(math.floor(radius))
    offsets = np.array([o for o in product(range(-r, r + 1), repeat=d)
                        if sum(x * x for x in o) <= radius * radius + 1e-12])
    lookup = -np.ones(grid.shape, dtype=np.int64)
    lookup[tuple(grid.index.T)] = np.arange(space.n)
    B = np.zeros((space.n, space.n))
    share = 1.0 / len(offsets)
    for o in offsets:
        target = grid.index + o
        inside = np.all((target >= 0) & (target < np.asarray(grid.shape)), axis=1)
        j = np.full(space.n, -1)
        j[inside] = lookup[tuple(target[inside].T)]
        ok = j >= 0
        B[np.flatnonzero(ok), j[ok]] += share
    B[np.diag_indices_from(B)] += 1.0 - B.sum(axis=1)
    return 0.5 * (np.eye(space.n) + B) if lazy else B


def swap_proposal() -> np.ndarray:
    """Two-state swap: always propose the other cell. Not positive."""
    return np.array([[0.0, 1.0], [1.0, 0.0]])


# ---------------------------------------------------------------------------
# checks

def _as_array(P):
    return P.entries if isinstance(P, TransitionMatrix) else np.asarray(P, dtype=float)


def check_detailed_balance(P: TransitionMatrix, pi: np.ndarray | None = None) -> float:
    """``max |pi_i P_ij - pi_j P_ji|``."""
    A = _as_array(P)
    pi = P.pi if pi is None else np.asarray(pi)
    F = pi[:, None] * A
    return float(np.max(np.abs(F - F.T)))


def check_stochastic(P) -> float:
    """Largest deviation of a row sum from 1 (negative entries count too)."""
    A = _as_array(P)
    return float(max(np.max(np.abs(A.sum(axis=1) - 1.0)), max(0.0, -A.min())))


def stationarity_residual(P: TransitionMatrix) -> float:
    return float(np.max(np.abs(P.pi @ P.entries - P.pi)))


@dataclass
class FactorizationReport:
    product: float         # max |P - M T M*|
    idempotency: float     # max |T^2 - T|
    self_adjointness: float  # max |D_mu T - T^T D_mu|
    adjoint: float         # max |D_mu^-1 M^T D_pi - lift|

    def passed(self, tol: float = DEFAULT_TOL, require_projection: bool = True) -> bool:
        vals = [self.product, self.self_adjointness, self.adjoint]
        if require_projection:
            vals.append(self.idempotency)
        return all(v <= tol for v in vals)

    def as_dict(self) -> dict:
        return {"product": self.product, "idempotency": self.idempotency,
                "self_adjointness": self.self_adjointness, "adjoint": self.adjoint}


def verify_factorization(P: TransitionMatrix, F: OperatorFactorization) -> FactorizationReport:
    T = F.T
    D = sparse.diags_array(F.mu)
    return FactorizationReport(
        product=_max_abs(_as_array(P) - F.product()),
        idempotency=_max_abs(T @ T - T),
        self_adjointness=_max_abs(D @ T - T.T @ D),
        adjoint=_max_abs(F.adjoint() - F.lift),
    )


def adjoint_trials(F: OperatorFactorization, rng: np.random.Generator, trials: int = 100) -> float:
    """Largest ``|<f, M g>_pi - <M* f, g>_mu|`` over random ``f, g``, with
    ``M*`` the closed-form lift."""
    worst = 0.0
    n = F.pi.size
    for _ in range(trials):
        f = rng.standard_normal(n)
        g = rng.standard_normal(F.k)
        lhs = float(np.sum(F.pi * f * (F.M @ g)))
        rhs = float(np.sum(F.mu * (F.lift @ f) * g))
        worst = max(worst, abs(lhs - rhs))
    return worst


def level_decomposition_check(space: DiscreteSpace, kernel=None, rng: np.random.Generator | None = None,
                              trials: int = 100) -> float:
    """Compare ``<T g, g>_mu`` with the band-weighted sum of the per-level
    quadratic forms ``<R_l g_l, g_l>_{U_l}`` for random ``g``.

    Returns the worst residual, relative to ``max(1, |<T g, g>_mu|)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    F = slice_factorization(space, kernel)
    total_mass = float(np.sum(space.volume * space.rho))
    kernels = list(level_kernels(space, kernel))
    # position of pair (i, l) in the auxiliary vector
    where = {(int(i), int(l)): a for a, (i, l) in enumerate(F.pairs)}
    idx = [np.array([where[(int(i), l)] for i in cells]) for l, (cells, *_rest) in enumerate(kernels)]
    worst = 0.0
    for _ in range(trials):
        g = rng.standard_normal(F.k)
        lhs = float(np.sum(F.mu * (F.T @ g) * g))
        rhs = 0.0
        for (cells, R, width, _), a in zip(kernels, idx):
            vol = space.volume[cells]
            level_volume = vol.sum()
            g_l = g[a]
            form = float(np.sum(vol / level_volume * (R @ g_l) * g_l))
            rhs += width * level_volume / total_mass * form
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return worst


# ---------------------------------------------------------------------------
# export

def export_csv(P: TransitionMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in P.entries:
            w.writerow([format(v, ".17g") for v in row])


def export_json(P: TransitionMatrix, path=None) -> dict:
    bundle = {"pi": P.pi.tolist(), "P": P.entries.tolist()}
    if path is not None:
        with open(path, "w") as fh:
            json.dump(bundle, fh)
    return bundle
