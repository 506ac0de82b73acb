"""Spectra of reversible kernels and the positivity report."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .operator_lab import TransitionMatrix, check_detailed_balance

__all__ = ["SpectralReport", "symmetrize", "eigenvalues_symmetric", "jacobi_eigenvalues",
           "spectral_report"]

JACOBI_MAX_SWEEPS = 100


def symmetrize(P: TransitionMatrix, pi: np.ndarray | None = None, tol: float = 1e-12) -> np.ndarray:
    """``S = D^{1/2} P D^{-1/2}`` with ``D = diag(pi)``, symmetrized exactly.

    ``S`` is symmetric precisely when ``P`` is reversible, and it has the
    same eigenvalues as ``P``.
    """
    A = P.entries if isinstance(P, TransitionMatrix) else np.asarray(P, dtype=float)
    pi = P.pi if pi is None else np.asarray(pi, dtype=float)
    if np.any(pi <= 0):
        raise ValueError("stationary weights must be positive")
    resid = check_detailed_balance(A, pi)
    if resid > tol:
        raise ValueError(f"matrix is not reversible (detailed-balance residual {resid:.3g})")
    r = np.sqrt(pi)
    S = r[:, None] * A / r[None, :]
    asym = float(np.max(np.abs(S - S.T)))
    if asym > 1e-10:
        raise ValueError(f"symmetrized matrix has asymmetry {asym:.3g}")
    return 0.5 * (S + S.T)


def _round_robin(n: int):
    """Pairings of a round-robin tournament on ``n`` players (even ``n``):
    ``n - 1`` rounds, each a perfect matching."""
    players = list(range(n))
    for _ in range(n - 1):
        half = n // 2
        yield np.array(players[:half]), np.array(players[half:][::-1])
        players = [players[0]] + [players[-1]] + players[1:-1]


def jacobi_eigenvalues(S: np.ndarray, tol: float = 1e-12, max_sweeps: int = JACOBI_MAX_SWEEPS) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits all index pairs in round-robin order, so every round
    applies ``n/2`` disjoint rotations at once. Stops when the off-diagonal
    Frobenius norm is at most ``tol * ||S||_F``.
    """
    A = np.array(S, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ValueError("Jacobi needs a symmetric matrix")
    if n == 1:
        return A.diagonal().copy()
    size = n + (n % 2)
    if size != n:  # dummy player; its rotations are skipped
        A = np.pad(A, ((0, 1), (0, 1)))
    scale = np.linalg.norm(A)
    if scale == 0:
        return np.zeros(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(A.diagonal()))
        if off <= tol * scale:
            return np.sort(A.diagonal()[:n])[::-1]
        for p, q in _round_robin(size):
            apq = A[p, q]
            active = (np.abs(apq) > 0) & (p < n) & (q < n)
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            with np.errstate(over="ignore"):
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
            big = np.abs(theta) > 1e150  # t ~ 1 / (2 theta); avoids overflow in theta**2
            th = np.where(big, 1.0, theta)
            t = np.sign(th) / (np.abs(th) + np.sqrt(th * th + 1.0))
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), np.where(theta == 0, 1.0, t))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            Ap, Aq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = c * Ap - s * Aq
            A[:, q] = s * Ap + c * Aq
            Ap, Aq = A[p, :].copy(), A[q, :].copy()
            A[p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[q, :] = s[:, None] * Ap + c[:, None] * Aq
            A[p, q] = 0.0
            A[q, p] = 0.0
    raise RuntimeError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def eigenvalues_symmetric(S: np.ndarray, method: str = "lapack") -> np.ndarray:
    """Full spectrum of a symmetric matrix, in descending order.

    ``method`` is ``"lapack"`` (``numpy.linalg.eigvalsh``) or ``"jacobi"``.
    """
    S = np.asarray(S, dtype=float)
    if method == "jacobi":
        return jacobi_eigenvalues(S)
    if method == "lapack":
        if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise ValueError("matrix is not symmetric")
        return np.linalg.eigvalsh(S)[::-1].copy()
    raise ValueError(f"unknown eigensolver {method!r}")


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    lambda_min: float
    beta: float
    gap: float
    positive: bool
    tolerance: float
    trace: float
    top_multiplicity: int
    matrix_id: str = ""

    @property
    def ergodic(self) -> bool:
        return self.top_multiplicity == 1

    def as_dict(self) -> dict:
        d = asdict(self)
        d["eigenvalues"] = [float(v) for v in self.eigenvalues]
        d["ergodic"] = self.ergodic
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.as_dict(), **kw)


def spectral_report(P: TransitionMatrix, tol: float = 1e-10, method: str = "lapack",
                    matrix_id: str | None = None) -> SpectralReport:
    """Spectrum, absolute spectral gap and positivity verdict for ``P``.

    ``beta`` is the largest absolute eigenvalue once a single copy of the top
    eigenvalue 1 is removed; a repeated eigenvalue 1 is reported through
    ``top_multiplicity`` rather than raised. ``P`` is judged positive when
    ``lambda_min >= -tol * max(1, |lambda_max|)``.
    """
    ev = eigenvalues_symmetric(symmetrize(P), method)
    rest = ev[1:]
    beta = float(np.max(np.abs(rest))) if rest.size else 0.0
    beta = min(beta, 1.0)
    lam_min = float(ev[-1])
    return SpectralReport(
        eigenvalues=ev,
        lambda_min=lam_min,
        beta=beta,
        gap=1.0 - beta,
        positive=lam_min >= -tol * max(1.0, abs(float(ev[0]))),
        tolerance=tol,
        trace=float(np.trace(P.entries)),
        top_multiplicity=int(np.sum(np.abs(ev - 1.0) <= 1e-10)),
        matrix_id=P.name if matrix_id is None else matrix_id,
    )
