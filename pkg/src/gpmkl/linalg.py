"""Cholesky helpers shared by the regression and classification fits."""

from __future__ import annotations

import functools

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

try:
    from threadpoolctl import threadpool_limits

    def single_threaded_blas():
        """Pin BLAS pools to one thread for many-small-factorization code.

        The inference loops issue thousands of factorizations and solves on
        matrices of a few hundred rows; threaded BLAS pools can be slower
        than single-threaded execution there by large factors.  Coarse
        parallelism belongs at the fold level instead.
        """
        return threadpool_limits(limits=1, user_api="blas")

except ImportError:  # pragma: no cover - threadpoolctl ships with scipy stacks
    from contextlib import nullcontext

    def single_threaded_blas():
        return nullcontext()


def serial_blas(func):
    """Run the decorated function under a single-threaded BLAS pool."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        with single_threaded_blas():
            return func(*args, **kwargs)

    return wrapper


__all__ = [
    "FactorizationError",
    "cholesky_with_jitter",
    "chol_solve",
    "tri_solve",
    "log_det_from_chol",
    "single_threaded_blas",
    "serial_blas",
]

# Relative jitter ladder: start at 1e-10 * trace/n, escalate by 10x up to
# 1e-4 * trace/n, then give up.
_JITTER_START = 1e-10
_JITTER_MAX = 1e-4


class FactorizationError(RuntimeError):
    """The matrix could not be factorized even after maximal jitter."""


def cholesky_with_jitter(a: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of a symmetric PSD matrix.

    Returns ``(L, jitter)`` where ``jitter`` is the diagonal boost that was
    needed (0.0 in the common case).  The scale of the boost is relative to
    ``trace(a)/n`` so behaviour is invariant under rescaling of ``a``.
    """
    if not np.isfinite(a).all():
        raise FactorizationError("matrix contains non-finite entries")
    n = a.shape[0]
    scale = float(np.trace(a)) / n
    try:
        return cholesky(a, lower=True, check_finite=False), 0.0
    except LinAlgError:
        pass
    if not np.isfinite(scale) or scale <= 0.0:
        raise FactorizationError("matrix has non-positive or non-finite trace")
    rel = _JITTER_START
    while rel <= _JITTER_MAX:
        jitter = rel * scale
        try:
            l = cholesky(
                a + jitter * np.eye(n), lower=True, check_finite=False
            )
            return l, jitter
        except LinAlgError:
            rel *= 10.0
    raise FactorizationError(
        f"Cholesky failed after jitter escalation up to {_JITTER_MAX * scale:g}"
    )


def chol_solve(l: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` given the lower Cholesky factor of ``A``."""
    return cho_solve((l, True), b, check_finite=False)


def tri_solve(l: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``L x = b`` for lower-triangular ``L``."""
    return solve_triangular(l, b, lower=True, check_finite=False)


def log_det_from_chol(l: np.ndarray) -> float:
    """log determinant of ``A`` from its lower Cholesky factor."""
    return 2.0 * float(np.sum(np.log(np.diag(l))))
