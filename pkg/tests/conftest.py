import numpy as np
import pytest
from scipy import stats

from chordwalk.chain import run_ensemble, sample_target


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def projection(d):
    v = np.arange(1.0, d + 1)
    return v / np.linalg.norm(v)


def two_sample_pvalue(sample, reference, bins=20):
    """Chi-square homogeneity test of two samples of a scalar statistic on
    ``bins`` cells that are equiprobable under the reference."""
    edges = np.quantile(reference, np.linspace(0, 1, bins + 1))
    edges[0], edges[-1] = -np.inf, np.inf
    table = np.vstack([np.histogram(sample, edges)[0], np.histogram(reference, edges)[0]])
    return stats.chi2_contingency(table)[1]


def stationarity_pvalue(sampler, rng, chains=40_000, steps=5, reference=200_000):
    """Start ``chains`` independent chains from the target, run ``steps``
    steps each, and compare the end points against an independent exact
    sample along a generic projection."""
    body, density = sampler.body, sampler.density
    starts = sample_target(body, density, chains, rng)
    ends, _, _ = run_ensemble(sampler, starts, steps, rng)
    ref = sample_target(body, density, reference, rng)
    v = projection(body.dimension)
    return two_sample_pvalue(ends @ v, ref @ v), ends, starts


CRITERIA_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(number, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}"
        CRITERIA_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)
