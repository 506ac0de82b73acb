"""Chain-quality metrics: exact TV decay, autocorrelation and ESS."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .operator_lab import TransitionMatrix

__all__ = ["ConvergenceCurve", "tv_curve", "autocorrelation", "effective_sample_size", "ess_summary"]

log = logging.getLogger(__name__)


@dataclass
class ConvergenceCurve:
    steps: np.ndarray
    tv_distance: np.ndarray

    @property
    def monotone(self) -> bool:
        """Whether the TV distance never increases (up to 1e-12)."""
        return bool(np.all(np.diff(self.tv_distance) <= 1e-12))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "tv"])
            for s, v in zip(self.steps, self.tv_distance):
                w.writerow([int(s), format(float(v), ".17g")])


def tv_curve(P: TransitionMatrix, start: int, n_max: int) -> ConvergenceCurve:
    """``(1/2) sum_j |(delta_start P^n)_j - pi_j|`` for ``n = 1..n_max``,
    by iterating the distribution exactly."""
    if not 0 <= start < P.n:
        raise ValueError(f"start cell {start} out of range")
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    dist = np.zeros(P.n)
    dist[start] = 1.0
    tv = np.empty(n_max)
    for k in range(n_max):
        dist = dist @ P.entries
        tv[k] = 0.5 * np.sum(np.abs(dist - P.pi))
    return ConvergenceCurve(np.arange(1, n_max + 1), np.clip(tv, 0.0, 1.0))


def autocorrelation(x, max_lag: int | None = None) -> np.ndarray:
    """Sample autocorrelation at lags ``0..max_lag`` (FFT, biased normalization)."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    max_lag = n - 1 if max_lag is None else int(max_lag)
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must lie in [0, {n - 1}]")
    y = x - x.mean()
    var = float(np.dot(y, y))
    if var <= 0 or var <= 1e-300 * n:
        raise ValueError("trajectory has zero sample variance")
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1]
    rho = acov / var
    rho[0] = 1.0
    return rho


def effective_sample_size(x) -> float:
    """``N / tau`` with ``tau = -1 + 2 sum_m (rho_2m + rho_2m+1)``, the sum
    stopped before the first non-positive pair.

    ``tau`` is floored at ``1 / log10(N)`` so the estimate stays positive for
    strongly antithetic chains; the result may exceed ``N`` and is not
    clamped.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    rho = autocorrelation(x)
    if rho.size % 2:
        rho = np.append(rho, 0.0)
    pairs = rho[0::2] + rho[1::2]
    nonpos = np.flatnonzero(pairs <= 0)
    stop = nonpos[0] if nonpos.size else pairs.size
    tau = -1.0 + 2.0 * float(np.sum(pairs[:stop]))
    tau = max(tau, 1.0 / math.log10(n)) if n > 1 else 1.0
    ess = n / tau
    if ess > n:
        log.info("ESS %.4g exceeds the sample size %d (antithetic chain)", ess, n)
    return ess


def ess_summary(x) -> dict:
    n = int(np.size(x))
    ess = effective_sample_size(x)
    return {"ess": ess, "n": n, "antithetic": ess > n}
