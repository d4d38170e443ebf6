"""Pivoted QR, matrix volume and MaxVol row selection."""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import NotTallError, NumericalDegeneracyError

logger = logging.getLogger(__name__)

DEFAULT_SQUARE_TOL = 1.01
DEFAULT_MAX_ITERS = 100
DEFAULT_RECT_TOL = 1.0
# Relative size of the last pivot below which a seed submatrix is singular
SINGULAR_PIVOT = 1e-14


@dataclass(frozen=True)
class PivotedQR:
    """Factors of ``A[:, perm] = q @ r``."""

    q: np.ndarray
    r: np.ndarray
    perm: np.ndarray


def volume(a: np.ndarray) -> float:
    """Volume ``sqrt(det(A^T A))`` of a tall matrix."""
    a = np.asarray(a, dtype=float)
    n, m = a.shape
    if n < m:
        raise NotTallError(f"Matrix of shape {a.shape} is not tall")
    return float(np.sqrt(max(np.linalg.det(a.T @ a), 0.0)))


def qr_pivoted(a: np.ndarray) -> PivotedQR:
    """Economic QR with column pivoting; ``|R[n, n]|`` is non-increasing."""
    q, r, perm = scipy.linalg.qr(np.asarray(a, dtype=float), mode="economic", pivoting=True)
    return PivotedQR(q=q, r=r, perm=perm)


def _coefficients(q: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Coefficients ``C`` with ``Q = C @ Q[rows]``."""
    return np.linalg.solve(q[rows].T, q.T).T


def maxvol_square(
    q: np.ndarray,
    tol: float = DEFAULT_SQUARE_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> np.ndarray:
    """
    Select r rows of an n x r matrix spanning a dominant square submatrix.

    The start is the row order of a pivoted QR of ``Q^T``. Rows are swapped
    while some coefficient of ``Q @ inv(Q[rows])`` exceeds ``tol`` in
    magnitude, at most ``max_iters`` times.

    Args:
        q: Tall matrix of full column rank
        tol: Dominance tolerance, at least 1
        max_iters: Maximum number of swaps

    Returns:
        Integer array of r distinct row positions
    """
    q = np.asarray(q, dtype=float)
    n, r = q.shape
    if n < r:
        raise NotTallError(f"Matrix of shape {q.shape} is not tall")
    if n == r:
        return np.arange(n)

    _, seed_r, perm = scipy.linalg.qr(q.T, mode="economic", pivoting=True)
    pivots = np.abs(np.diag(seed_r))
    if pivots[0] == 0.0 or pivots[-1] <= SINGULAR_PIVOT * pivots[0]:
        raise NumericalDegeneracyError("MaxVol seed submatrix is singular")
    rows = perm[:r].copy()

    coef = _coefficients(q, rows)
    iters = 0
    i, j = np.unravel_index(np.argmax(np.abs(coef)), coef.shape)
    while abs(coef[i, j]) > tol and iters < max_iters:
        rows[j] = i
        column = coef[:, j].copy()
        row = coef[i].copy()
        row[j] -= 1.0
        coef -= np.outer(column, row) / coef[i, j]
        iters += 1
        i, j = np.unravel_index(np.argmax(np.abs(coef)), coef.shape)

    logger.debug(f"Square MaxVol on {n}x{r} finished after {iters} swaps")
    return rows


def maxvol_rect(
    q: np.ndarray,
    dr: int,
    tol: float = DEFAULT_RECT_TOL,
    square_tol: float = DEFAULT_SQUARE_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> np.ndarray:
    """
    Extend a square MaxVol selection by up to ``dr`` rows.

    The row with the largest squared coefficient norm is added while that
    norm exceeds ``tol**2``; coefficients are refreshed by a rank-one
    update of the pseudo-inverse.

    Returns:
        Integer array of between r and ``min(r + dr, n)`` row positions
    """
    q = np.asarray(q, dtype=float)
    n, r = q.shape
    if n < r:
        raise NotTallError(f"Matrix of shape {q.shape} is not tall")
    if n == r:
        return np.arange(n)

    rows = list(maxvol_square(q, square_tol, max_iters))
    limit = min(r + dr, n)
    if len(rows) >= limit:
        return np.asarray(rows)

    coef = _coefficients(q, np.asarray(rows))
    chosen = np.zeros(n, dtype=bool)
    chosen[rows] = True
    norms = np.sum(coef * coef, axis=1)
    norms[chosen] = 0.0
    tol2 = tol * tol
    while len(rows) < limit:
        i = int(np.argmax(norms))
        if norms[i] <= tol2:
            break
        c = coef[i].copy()
        v = coef @ c
        scale = 1.0 / (1.0 + v[i])
        coef = np.hstack([coef - scale * np.outer(v, c), (scale * v)[:, None]])
        norms -= scale * v * v
        rows.append(i)
        chosen[i] = True
        norms[chosen] = 0.0

    return np.asarray(rows)
