"""Hit-and-run, random-scan Gibbs, simple slice and Metropolis samplers.

Each sampler is a batch kernel ``kernel(X, rng) -> (X_new, moved)`` acting on
an ``(m, d)`` array of independent chain positions; the single-chain step
functions wrap the kernel with ``m = 1``. Running many chains through one
kernel call is how the stationarity checks stay cheap.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .density import (Density, WEIGHT_FLOOR, chord_weight, line_samples,
                      line_weights, sample_chord)
from .geometry import ConvexBody, random_direction

__all__ = [
    "ChainState", "Proposal", "Sampler", "acceptance_ratio",
    "hit_and_run_step", "gibbs_step", "slice_step", "metropolis_step",
    "lazy_step", "run_chain", "run_ensemble", "sample_target", "sample_uniform",
    "make_sampler", "SAMPLERS", "REJECTION_BUDGET",
]

REJECTION_BUDGET = 10 ** 7
_BATCH_DRAWS = 1 << 16


@dataclass(frozen=True)
class ChainState:
    """Position of one chain plus its counters and random stream.

    ``accepted`` counts accepted Metropolis proposals, ``held`` counts lazy
    holds; both are cumulative over ``step_count`` steps.
    """

    position: np.ndarray
    rng: np.random.Generator
    step_count: int = 0
    accepted: int = 0
    held: int = 0


@dataclass(frozen=True)
class Proposal:
    """Metropolis proposal kernel ``B``, reversible w.r.t. uniform on ``K``.

    ``independent-uniform`` draws from the uniform distribution on the body;
    ``ball-walk`` draws uniformly from the ball of ``radius`` around the
    current point. Proposals outside the body are rejections.
    """

    kind: str = "ball-walk"
    radius: float = 0.5

    def __post_init__(self):
        if self.kind not in ("independent-uniform", "ball-walk"):
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if self.kind == "ball-walk" and not self.radius > 0:
            raise ValueError("ball-walk radius must be positive")

    def propose(self, body: ConvexBody, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        m, d = X.shape
        if self.kind == "independent-uniform":
            return sample_uniform(body, m, rng)
        theta = random_direction(rng, d, m)
        r = self.radius * rng.random(m) ** (1.0 / d)
        return X + r[:, None] * theta

    @classmethod
    def from_spec(cls, spec: dict) -> "Proposal":
        return cls(spec.get("type", "ball-walk"), float(spec.get("radius", 0.5)))


def acceptance_ratio(rho_x: float, rho_y: float) -> float:
    """``min(1, rho_y / rho_x)``."""
    if not rho_x > 0:
        raise ValueError("current density must be positive")
    if rho_y < 0:
        raise ValueError("density values are non-negative")
    return min(1.0, rho_y / rho_x)


def _rejection(body: ConvexBody, accept: Callable, m: int, rng: np.random.Generator,
               budget: int = REJECTION_BUDGET) -> np.ndarray:
    """Draw ``m`` points from the bounding box, keeping the first accepted
    candidate per slot. ``accept(cand, slots)`` gets candidates of shape
    ``(p, k, d)`` and the slot indices; returns a ``(p, k)`` boolean mask."""
    d = body.dimension
    out = np.empty((m, d))
    pending = np.arange(m)
    used = np.zeros(m, dtype=np.int64)
    while pending.size:
        k = max(1, _BATCH_DRAWS // pending.size)
        cand = body.sample_bounding_box(rng, pending.size * k).reshape(pending.size, k, d)
        ok = accept(cand, pending)
        hit = ok.any(axis=1)
        first = ok.argmax(axis=1)
        out[pending[hit]] = cand[hit, first[hit]]
        used[pending] += np.where(hit, first + 1, k)
        if np.any(used[pending[~hit]] > budget):
            raise RuntimeError(
                f"rejection budget of {budget} proposals exceeded; the target set has "
                "negligible volume relative to the bounding box")
        pending = pending[~hit]
    return out


def sample_uniform(body: ConvexBody, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` i.i.d. uniform points in the body."""
    return _rejection(body, lambda c, _: body.contains(c.reshape(-1, body.dimension)).reshape(c.shape[:2]),
                      m, rng)


def sample_target(body: ConvexBody, density: Density, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` i.i.d. draws from the normalized ``density`` on the body, by
    rejection against ``sup_bound`` over the bounding box."""
    def accept(cand, slots):
        flat = cand.reshape(-1, body.dimension)
        ok = body.contains(flat) & (rng.random(len(flat)) * density.sup_bound < density.evaluator(flat))
        return ok.reshape(cand.shape[:2])
    return _rejection(body, accept, m, rng)


# ---------------------------------------------------------------------------
# batch kernels

def _move_along_chords(body, density, X, Theta, rng):
    lo, hi = body.extents(X, Theta)
    lo, hi = np.minimum(lo, 0.0), np.maximum(hi, 0.0)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("chord is unbounded")
    if density.has_closed_form:
        w = line_weights(density, X, Theta, lo, hi)
        if np.any(~(w > WEIGHT_FLOOR)):
            raise ValueError("chord weight underflows; density vanishes on the chord")
        s = line_samples(density, X, Theta, lo, hi, rng.random(len(X)))
        return X + s[:, None] * Theta
    return np.array([sample_chord(chord_weight(density, body, x, t), rng) for x, t in zip(X, Theta)])


def hit_and_run_kernel(body, density, X, rng):
    theta = random_direction(rng, body.dimension, len(X))
    return _move_along_chords(body, density, X, theta, rng), np.ones(len(X), bool)


def gibbs_kernel(body, density, X, rng):
    axes = rng.integers(body.dimension, size=len(X))
    theta = np.eye(body.dimension)[axes]
    return _move_along_chords(body, density, X, theta, rng), np.ones(len(X), bool)


def slice_kernel(body, density, X, rng, budget=REJECTION_BUDGET):
    levels = density.evaluator(X) * (1.0 - rng.random(len(X)))  # uniform on (0, rho(x)]

    def accept(cand, slots):
        flat = cand.reshape(-1, body.dimension)
        ok = body.contains(flat) & (density.evaluator(flat) >= np.repeat(levels[slots], cand.shape[1]))
        return ok.reshape(cand.shape[:2])

    return _rejection(body, accept, len(X), rng, budget), np.ones(len(X), bool)


def metropolis_kernel(body, density, proposal, X, rng):
    Y = proposal.propose(body, X, rng)
    inside = body.contains(Y)
    rho_x = density.evaluator(X)
    rho_y = np.where(inside, density.evaluator(np.where(inside[:, None], Y, X)), 0.0)
    accept = rng.random(len(X)) * rho_x < rho_y
    return np.where(accept[:, None], Y, X), accept


# ---------------------------------------------------------------------------
# single-chain steps

def _advance(state, new_position, accepted=0, held=0):
    return replace(state, position=new_position, step_count=state.step_count + 1,
                   accepted=state.accepted + accepted, held=state.held + held)


def hit_and_run_step(body: ConvexBody, density: Density, state: ChainState) -> ChainState:
    X, _ = hit_and_run_kernel(body, density, state.position[None, :], state.rng)
    return _advance(state, X[0])


def gibbs_step(body: ConvexBody, density: Density, state: ChainState) -> ChainState:
    X, _ = gibbs_kernel(body, density, state.position[None, :], state.rng)
    return _advance(state, X[0])


def slice_step(body: ConvexBody, density: Density, state: ChainState) -> ChainState:
    X, _ = slice_kernel(body, density, state.position[None, :], state.rng)
    return _advance(state, X[0])


def metropolis_step(body: ConvexBody, density: Density, proposal: Proposal,
                    state: ChainState) -> ChainState:
    X, acc = metropolis_kernel(body, density, proposal, state.position[None, :], state.rng)
    return _advance(state, X[0], accepted=int(acc[0]))


def lazy_step(inner_step: Callable[[ChainState], ChainState], state: ChainState,
              rng: np.random.Generator | None = None) -> ChainState:
    """Hold with probability 1/2, otherwise delegate to ``inner_step``."""
    rng = state.rng if rng is None else rng
    if rng.random() < 0.5:
        return _advance(state, state.position, held=1)
    return inner_step(state)


SAMPLERS = ("hit-and-run", "gibbs", "slice", "metropolis")


@dataclass(frozen=True, eq=False)
class Sampler:
    """A named sampler bound to a body, density and (for Metropolis) proposal.

    ``name`` is one of :data:`SAMPLERS`, optionally prefixed by one or more
    ``lazy:``.
    """

    name: str
    body: ConvexBody
    density: Density
    proposal: Proposal | None = None

    def __post_init__(self):
        inner = self.base_name
        if inner not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.name!r}")
        if inner == "metropolis" and self.proposal is None:
            object.__setattr__(self, "proposal", Proposal())
        if inner != "metropolis" and self.proposal is not None:
            raise ValueError(f"sampler {inner!r} takes no proposal")

    @property
    def laziness(self) -> int:
        return self.name.count("lazy:")

    @property
    def base_name(self) -> str:
        return self.name.replace("lazy:", "")

    def _base_kernel(self, X, rng):
        b, dens = self.body, self.density
        match self.base_name:
            case "hit-and-run":
                return hit_and_run_kernel(b, dens, X, rng)
            case "gibbs":
                return gibbs_kernel(b, dens, X, rng)
            case "slice":
                return slice_kernel(b, dens, X, rng)
            case "metropolis":
                return metropolis_kernel(b, dens, self.proposal, X, rng)

    def kernel(self, X: np.ndarray, rng: np.random.Generator):
        """One step for every row of ``X``; returns ``(X_new, accepted, held)``."""
        return self._step_at_depth(np.asarray(X, dtype=float), rng, self.laziness)

    def _step_at_depth(self, X, rng, depth):
        if depth == 0:
            X_new, accepted = self._base_kernel(X, rng)
            return X_new, accepted, np.zeros(len(X), bool)
        held = rng.random(len(X)) < 0.5
        out, accepted = X.copy(), np.zeros(len(X), bool)
        go = ~held
        if np.any(go):
            out[go], accepted[go], inner_held = self._step_at_depth(X[go], rng, depth - 1)
            held[go] = inner_held
        return out, accepted, held

    def __call__(self, state: ChainState) -> ChainState:
        X, acc, held = self.kernel(state.position[None, :], state.rng)
        is_metropolis = self.base_name == "metropolis"
        return _advance(state, X[0], accepted=int(acc[0]) if is_metropolis else 0,
                        held=int(held[0]))

    def validate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.body.dimension,):
            raise ValueError(f"initial point must have shape ({self.body.dimension},)")
        if not self.body.contains(x):
            raise ValueError(f"initial point {x.tolist()} is outside the body")
        if not self.density(x) > 0:
            raise ValueError(f"initial point {x.tolist()} has zero density")
        return x


def make_sampler(name: str, body: ConvexBody, density: Density,
                 proposal: Proposal | None = None) -> Sampler:
    return Sampler(name, body, density, proposal)


def run_chain(step_fn: Callable[[ChainState], ChainState], initial, n: int,
              rng: np.random.Generator, return_state: bool = False):
    """Run ``n`` steps from ``initial``; returns the ``(n + 1, d)`` trajectory
    including the initial point (and the final state if ``return_state``)."""
    if n < 0:
        raise ValueError("number of steps must be non-negative")
    validate = getattr(step_fn, "validate", None)
    initial = validate(initial) if validate else np.asarray(initial, dtype=float)
    traj = np.empty((n + 1, initial.size))
    traj[0] = initial
    state = ChainState(initial, rng)
    for i in range(1, n + 1):
        state = step_fn(state)
        traj[i] = state.position
    return (traj, state) if return_state else traj


def run_ensemble(sampler: Sampler, starts: np.ndarray, n: int, rng: np.random.Generator):
    """Advance independent chains, one per row of ``starts``, by ``n`` steps.

    Returns final positions and per-chain accepted/held counts.
    """
    X = np.array(starts, dtype=float)
    accepted = np.zeros(len(X), np.int64)
    held = np.zeros(len(X), np.int64)
    for _ in range(n):
        X, acc, hold = sampler.kernel(X, rng)
        accepted += acc
        held += hold
    return X, accepted, held
