"""Shared numerical oracles, kept independent of the library internals."""

import numpy as np


def fd_gradient(func, x0, h=1e-5):
    """Central finite-difference gradient of a scalar function."""
    x0 = np.asarray(x0, dtype=float)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (func(xp) - func(xm)) / (2.0 * h)
    return grad


def rel_err(a, b):
    """Scale-aware distance between two vectors (or scalars)."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    denom = max(np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def pairwise_auc(scores, labels):
    """Brute-force tie-corrected concordance probability."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = np.nonzero(labels == 1)[0]
    neg = np.nonzero(labels == -1)[0]
    total = 0.0
    for i in pos:
        for j in neg:
            if scores[i] > scores[j]:
                total += 1.0
            elif scores[i] == scores[j]:
                total += 0.5
    return total / (len(pos) * len(neg))
