import copy
import math

import numpy as np
import pytest
from scipy import stats

from chordwalk import density as dens
from chordwalk.chain import (ChainState, Proposal, Sampler, acceptance_ratio, gibbs_kernel,
                             gibbs_step, hit_and_run_step, lazy_step, make_sampler, metropolis_step,
                             run_chain, run_ensemble, sample_target, slice_kernel, slice_step)
from chordwalk.geometry import Ball, Box
from chordwalk.scenarios import builtin_pairs

from conftest import stationarity_pvalue, two_sample_pvalue

UNIT_SQUARE = Box([0.0, 0.0], [1.0, 1.0])


def two_level_density():
    """rho = 1 on [0, 1), 2 on [1, 2]: the continuous two-cell space."""
    return dens.custom(lambda x: np.where(x[..., 0] < 1.0, 1.0, 2.0), 2.0, vectorized=True)


def truncexp_cdf(rate, lo=0.0, hi=1.0):
    return lambda s: np.expm1(-rate * (s - lo)) / np.expm1(-rate * (hi - lo))


def se(p, n):
    return math.sqrt(p * (1 - p) / n)


def test_acceptance_ratio_examples():
    assert acceptance_ratio(2.0, 1.0) == 0.5
    assert acceptance_ratio(1.0, 3.0) == 1.0
    assert acceptance_ratio(1.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        acceptance_ratio(0.0, 1.0)


@pytest.mark.parametrize("step", [hit_and_run_step, gibbs_step, slice_step])
def test_steps_stay_in_support(step, rng):
    body, rho = Ball([0.0, 0.0, 0.0], 1.0), dens.exponential([1.5, -0.8, 0.6], Ball([0, 0, 0], 1.0))
    state = ChainState(np.zeros(3), rng)
    for _ in range(300):
        state = step(body, rho, state)
        assert body.contains(state.position) and rho(state.position) > 0
    assert state.step_count == 300


def test_metropolis_step_counts(rng):
    state = ChainState(np.array([0.5, 0.5]), rng)
    prop = Proposal("independent-uniform")
    for _ in range(200):
        state = metropolis_step(UNIT_SQUARE, dens.uniform(), prop, state)
    # every uniform proposal for a uniform target is accepted
    assert state.accepted == 200


def test_gibbs_changes_at_most_one_coordinate(rng):
    X = sample_target(UNIT_SQUARE, dens.gaussian(0.3, [0.4, 0.6]), 5000, rng)
    Y, _ = gibbs_kernel(UNIT_SQUARE, dens.gaussian(0.3, [0.4, 0.6]), X, rng)
    assert np.all(np.sum(Y != X, axis=1) <= 1)


def test_gibbs_resampled_coordinate_has_conditional_law(rng):
    rates = np.array([1.5, -0.8])
    rho = dens.exponential(rates, UNIT_SQUARE)
    X = np.tile([0.3, 0.7], (100_000, 1))
    Y, _ = gibbs_kernel(UNIT_SQUARE, rho, X, rng)
    for axis in (0, 1):
        moved = Y[Y[:, 1 - axis] == X[:, 1 - axis], axis]
        assert stats.kstest(moved, truncexp_cdf(rates[axis])).pvalue > 0.01


@pytest.mark.parametrize("name", ["hit-and-run", "gibbs"])
def test_one_dimensional_chord_samplers_are_exact(name, rng):
    rho = dens.exponential([1.5], Box([0.0], [1.0]))
    sampler = make_sampler(name, Box([0.0], [1.0]), rho)
    ends, _, _ = run_ensemble(sampler, np.full((100_000, 1), 0.2), 1, rng)
    # one step from any point already yields the target law
    assert stats.kstest(ends[:, 0], truncexp_cdf(1.5)).pvalue > 0.01


def test_slice_with_constant_density_is_uniform(rng):
    sampler = make_sampler("slice", UNIT_SQUARE, dens.uniform())
    ends, _, _ = run_ensemble(sampler, np.full((100_000, 2), 0.1), 1, rng)
    assert stats.kstest(ends[:, 0], "uniform").pvalue > 0.01
    assert stats.kstest(ends[:, 1], "uniform").pvalue > 0.01


def test_slice_output_reaches_the_level(rng):
    body, rho = Ball([0.0, 0.0], 1.0), dens.gaussian(0.4, d=2)
    X = sample_target(body, rho, 20_000, rng)
    levels = rho(X) * (1.0 - copy.deepcopy(rng).random(len(X)))
    Y, _ = slice_kernel(body, rho, X, rng)
    assert np.all(rho(Y) >= levels) and np.all(body.contains(Y))


def test_slice_rejection_budget(rng):
    body, rho = Box([-1.0, -1.0], [1.0, 1.0]), dens.gaussian(1e-3, d=2)
    with pytest.raises(RuntimeError, match="budget"):
        slice_kernel(body, rho, np.zeros((1, 2)), rng, budget=1000)


def test_slice_two_level_transition_probabilities(rng):
    body, rho = Box([0.0], [2.0]), two_level_density()
    sampler = make_sampler("slice", body, rho)
    n = 100_000
    from_low, _, _ = run_ensemble(sampler, np.full((n, 1), 0.5), 1, rng)
    from_high, _, _ = run_ensemble(sampler, np.full((n, 1), 1.5), 1, rng)
    assert abs(np.mean(from_low < 1.0) - 0.5) < 4 * se(0.5, n)
    assert abs(np.mean(from_high < 1.0) - 0.25) < 4 * se(0.25, n)


def test_metropolis_acceptance_rate_matches_expectation(rng):
    # pi = (1/3, 2/3); from the low cell every move is accepted, from the high
    # cell half the proposals land low and are accepted with probability 1/2
    body, rho = Box([0.0], [2.0]), two_level_density()
    sampler = make_sampler("metropolis", body, rho, Proposal("independent-uniform"))
    n = 100_000
    starts = sample_target(body, rho, n, rng)
    ends, accepted, _ = run_ensemble(sampler, starts, 1, rng)
    expected = 1 / 3 + (2 / 3) * 0.75
    assert abs(accepted.mean() - expected) < 4 * se(expected, n)
    from_high = starts[:, 0] >= 1.0
    assert abs(np.mean(ends[from_high, 0] < 1.0) - 0.25) < 4 * se(0.25, from_high.sum())


def test_metropolis_out_of_body_proposals_are_rejected(rng):
    sampler = make_sampler("metropolis", UNIT_SQUARE, dens.uniform(), Proposal("ball-walk", 5.0))
    X = np.full((20_000, 2), 0.5)
    Y, acc, _ = sampler.kernel(X, rng)
    assert np.all(UNIT_SQUARE.contains(Y))
    np.testing.assert_array_equal(Y[~acc], X[~acc])
    # the ball of radius 5 meets the square in a fraction 1/(25 pi) of its area
    p = 1 / (25 * math.pi)
    assert abs(acc.mean() - p) < 4 * se(p, len(X))


@pytest.mark.parametrize("depth,hold", [(1, 0.5), (2, 0.75)])
def test_lazy_hold_frequency(depth, hold, rng):
    sampler = make_sampler("lazy:" * depth + "hit-and-run", UNIT_SQUARE, dens.uniform())
    n = 100_000
    _, _, held = run_ensemble(sampler, np.full((n, 2), 0.5), 1, rng)
    assert abs(held.mean() - hold) < 4 * se(hold, n)


def test_lazy_step_function(rng):
    inner = lambda s: hit_and_run_step(UNIT_SQUARE, dens.uniform(), s)
    state = ChainState(np.array([0.5, 0.5]), rng)
    for _ in range(4000):
        state = lazy_step(inner, state)
    assert abs(state.held / 4000 - 0.5) < 4 * se(0.5, 4000)


def test_run_chain_shapes_and_validation(rng):
    sampler = make_sampler("gibbs", UNIT_SQUARE, dens.uniform())
    traj = run_chain(sampler, [0.5, 0.5], 0, rng)
    np.testing.assert_array_equal(traj, [[0.5, 0.5]])
    assert run_chain(sampler, [0.5, 0.5], 10, rng).shape == (11, 2)
    with pytest.raises(ValueError, match="outside"):
        run_chain(sampler, [1.5, 0.5], 10, rng)
    with pytest.raises(ValueError, match="shape"):
        run_chain(sampler, [0.5], 10, rng)
    with pytest.raises(ValueError):
        run_chain(sampler, [0.5, 0.5], -1, rng)


def test_run_chain_determinism():
    sampler = make_sampler("slice", Ball([0, 0], 1.0), dens.gaussian(0.5, d=2))
    a = run_chain(sampler, [0.1, 0.1], 50, np.random.default_rng(7))
    b = run_chain(sampler, [0.1, 0.1], 50, np.random.default_rng(7))
    c = run_chain(sampler, [0.1, 0.1], 50, np.random.default_rng(8))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a[1], c[1])


def test_sampler_construction_errors():
    with pytest.raises(ValueError, match="unknown sampler"):
        Sampler("langevin", UNIT_SQUARE, dens.uniform())
    with pytest.raises(ValueError, match="no proposal"):
        Sampler("gibbs", UNIT_SQUARE, dens.uniform(), Proposal())
    with pytest.raises(ValueError):
        Proposal("random-jump")
    s = Sampler("lazy:lazy:metropolis", UNIT_SQUARE, dens.uniform())
    assert (s.laziness, s.base_name, s.proposal.kind) == (2, "metropolis", "ball-walk")


def test_sample_target_matches_truncated_exponential(rng):
    rho = dens.exponential([1.5], Box([0.0], [1.0]))
    x = sample_target(Box([0.0], [1.0]), rho, 50_000, rng)[:, 0]
    assert stats.kstest(x, truncexp_cdf(1.5)).pvalue > 0.01


# ---------------------------------------------------------------------------
# stationarity harness: sensitivity and the quadrature path

class ChordIgnoringSampler(Sampler):
    """Hit-and-run that moves uniformly along the chord, ignoring rho."""

    def _base_kernel(self, X, rng):
        return make_sampler("hit-and-run", self.body, dens.uniform()).kernel(X, rng)[:2]


def test_harness_detects_a_broken_kernel(rng):
    _, body, rho = builtin_pairs(2)[1]
    broken = ChordIgnoringSampler("hit-and-run", body, rho)
    p, _, _ = stationarity_pvalue(broken, rng, chains=40_000, steps=5)
    assert p < 1e-6


@pytest.mark.parametrize("name", ["hit-and-run", "gibbs"])
def test_quadrature_path_preserves_target(name, rng):
    body = Ball([0.0, 0.0], 1.0)
    rho = dens.custom(lambda x: 1.0 + np.sin(3 * x[..., 0]) ** 2 + x[..., 1] ** 2, 3.0, body,
                      vectorized=True)
    p, _, _ = stationarity_pvalue(make_sampler(name, body, rho), rng, chains=4000, steps=2,
                                  reference=50_000)
    assert p > 0.01


def test_two_sample_pvalue_on_identical_laws(rng):
    assert two_sample_pvalue(rng.normal(size=20_000), rng.normal(size=200_000)) > 0.001
