import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chordwalk import operator_lab as lab
from chordwalk.diagnostics import autocorrelation, effective_sample_size, ess_summary, tv_curve
from chordwalk.scenarios import two_cell_space


def test_tv_two_cell_examples():
    curve = tv_curve(lab.build_slice_matrix(two_cell_space()), 0, 3)
    np.testing.assert_allclose(curve.tv_distance, [1 / 6, 1 / 24, 1 / 96], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(curve.steps, [1, 2, 3])
    assert curve.monotone


def test_tv_stationary_start_is_flat():
    P = lab.TransitionMatrix(np.full((3, 3), 1 / 3), lab.discrete_space([1.0] * 3), "flat")
    np.testing.assert_allclose(tv_curve(P, 1, 5).tv_distance, 0.0, atol=1e-15)


def test_tv_matches_matrix_powers():
    sp = lab.random_space(np.random.default_rng(9), 12)
    P = lab.build_slice_matrix(sp)
    curve = tv_curve(P, 4, 8)
    for n, tv in zip(curve.steps, curve.tv_distance):
        row = np.linalg.matrix_power(P.entries, int(n))[4]
        assert tv == pytest.approx(0.5 * np.abs(row - P.pi).sum(), abs=1e-14)
    assert curve.monotone


def test_tv_errors():
    P = lab.build_slice_matrix(two_cell_space())
    with pytest.raises(ValueError):
        tv_curve(P, 2, 5)
    with pytest.raises(ValueError):
        tv_curve(P, 0, 0)


def test_tv_csv(tmp_path):
    tv_curve(lab.build_slice_matrix(two_cell_space()), 0, 2).to_csv(tmp_path / "tv.csv")
    lines = (tmp_path / "tv.csv").read_text().splitlines()
    assert lines[0] == "step,tv" and float(lines[1].split(",")[1]) == 1 / 6


def test_autocorrelation_basics(rng):
    x = rng.standard_normal(20_000)
    rho = autocorrelation(x, 50)
    assert rho[0] == 1.0 and rho.shape == (51,)
    assert np.all(np.abs(rho[1:]) < 4 / math.sqrt(x.size))
    with pytest.raises(ValueError, match="variance"):
        autocorrelation(np.ones(100))
    with pytest.raises(ValueError):
        autocorrelation(x, x.size)


def test_autocorrelation_of_ar1(rng):
    phi, n = 0.8, 200_000
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0]
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    rho = autocorrelation(x, 5)
    np.testing.assert_allclose(rho, phi ** np.arange(6), atol=0.02)
    # tau = (1 + phi) / (1 - phi) = 9
    assert effective_sample_size(x) == pytest.approx(n / 9, rel=0.1)


def test_ess_iid_is_near_n(rng):
    x = rng.standard_normal(10_000)
    assert effective_sample_size(x) == pytest.approx(10_000, rel=0.1)


def test_ess_of_alternating_chain_exceeds_n():
    x = np.tile([1.0, -1.0], 500)
    summary = ess_summary(x)
    assert summary["ess"] > summary["n"] and summary["antithetic"]
    assert summary["ess"] == pytest.approx(1000 * math.log10(1000))


def test_lazy_chain_has_smaller_ess(rng):
    x = rng.standard_normal(50_000)
    hold = rng.random(x.size) < 0.5
    hold[0] = False
    lazy = x[np.maximum.accumulate(np.where(hold, 0, np.arange(x.size)))]
    assert effective_sample_size(lazy) < effective_sample_size(x)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 3000))
def test_ess_is_positive_and_finite(seed, n):
    x = np.random.default_rng(seed).standard_normal(n)
    ess = effective_sample_size(x)
    assert math.isfinite(ess) and ess > 0
