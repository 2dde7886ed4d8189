"""Stationary distributions of finite CTMCs: solve ``pi Q = 0``, ``sum(pi) = 1``."""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import lsqr, splu

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000
CLAMP_LIMIT = 1e-8


class StationarySolveError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


def residual(pi: np.ndarray, Q) -> float:
    """Infinity norm of ``pi Q``."""
    r = Q.T @ pi if sp.issparse(Q) else pi @ Q
    return float(np.max(np.abs(r))) if len(r) else 0.0


def _augmented(Q):
    n = Q.shape[0]
    if sp.issparse(Q):
        A = sp.vstack([Q.T.tocsr(), sp.csr_matrix(np.ones((1, n)))]).tocsr()
    else:
        A = np.vstack([Q.T, np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    return A, b


def _dense(Q) -> np.ndarray:
    Qd = Q.toarray() if sp.issparse(Q) else np.asarray(Q, dtype=float)
    n = Qd.shape[0]
    A = Qd.T.copy()
    # one balance equation is redundant for an irreducible chain; use the
    # normalisation row in place of the last one
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        Aug, rhs = _augmented(Qd)
        return np.linalg.lstsq(Aug, rhs, rcond=None)[0]


def _sparse_direct(Q, pin: int = 0) -> np.ndarray:
    # a dense normalisation row ruins the LU fill-in; pin one component
    # instead and rescale afterwards
    n = Q.shape[0]
    A = Q.T.tocsr()
    mask = np.ones(n)
    mask[pin] = 0.0
    A = sp.diags(mask) @ A + sp.csr_matrix(([1.0], ([pin], [pin])), shape=(n, n))
    b = np.zeros(n)
    b[pin] = 1.0
    x = splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(b)
    return x / x.sum()


def _lsqr(Q, tol: float, max_iters: int, x0=None) -> np.ndarray:
    A, b = _augmented(Q)
    out = lsqr(A, b, atol=min(tol, 1e-14), btol=min(tol, 1e-14), conlim=1e16,
               iter_lim=max_iters, x0=x0)
    return out[0]


def _finish(pi: np.ndarray) -> np.ndarray:
    low = pi.min()
    if low < -CLAMP_LIMIT:
        raise StationarySolveError(f"solution has a negative component {low:.3e}")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def solve_stationary(Q, tolerance: float = 1e-10, max_iters: int | None = None,
                     method: str = "auto") -> np.ndarray:
    """Stationary distribution of the chain with generator ``Q``.

    ``method`` is ``"dense"`` (direct solve), ``"lsqr"`` (iterative least
    squares on the system augmented with the normalisation row),
    ``"direct"`` (sparse LU) or ``"auto"``: dense up to 2000 states, LSQR
    beyond, with sparse LU as the fallback when LSQR misses the tolerance.
    Tiny negative entries are clamped; anything below ``-1e-8`` is an error.
    """
    n = Q.shape[0]
    if n == 0:
        raise StationarySolveError("empty state space")
    if n == 1:
        return np.ones(1)
    if max_iters is None:
        max_iters = 10 * n

    if method == "auto":
        if n <= DENSE_LIMIT:
            method = "dense"
        else:
            Qs = sp.csr_matrix(Q)
            pi = _finish(_lsqr(Qs, tolerance, max_iters))
            if residual(pi, Qs) <= tolerance:
                return pi
            log.debug("LSQR residual %.3e; falling back to sparse LU", residual(pi, Qs))
            method = "direct"
    if method == "dense":
        pi = _dense(Q)
    elif method == "direct":
        Qs = sp.csr_matrix(Q)
        pi = _sparse_direct(Qs)
        if residual(pi, Qs) > tolerance:
            log.debug("sparse LU residual %.3e; refining with LSQR", residual(pi, Qs))
            pi = _lsqr(Qs, tolerance, max_iters, x0=pi)
    elif method == "lsqr":
        pi = _lsqr(sp.csr_matrix(Q), tolerance, max_iters)
    else:
        raise ValueError(f"unknown method {method!r}")

    pi = _finish(np.asarray(pi, dtype=float))
    res = residual(pi, Q)
    if not np.isfinite(res) or res > tolerance:
        raise StationarySolveError(f"{method} solve did not reach tolerance {tolerance:g}", res)
    return pi


def generator_from_rates(n: int, rows, cols, rates) -> sp.csr_matrix:
    """Sparse generator from off-diagonal rate triplets (duplicates summed)."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    rates = np.asarray(rates, dtype=float)
    if np.any(rates < 0):
        raise ValueError("negative transition rate")
    off = sp.csr_matrix((rates, (rows, cols)), shape=(n, n))
    off.setdiag(0.0)
    off.eliminate_zeros()
    out = np.asarray(off.sum(axis=1)).ravel()
    return (off - sp.diags(out)).tocsr()
