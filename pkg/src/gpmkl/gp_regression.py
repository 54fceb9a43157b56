"""Exact Gaussian process regression with Gaussian observation noise.

The model is y = f(x) + e with f drawn from a GP with constant mean and a
composite covariance, and e ~ N(0, sn^2).  Evidence and its gradient are
analytic, so all hyperparameters (amplitudes, bandwidths, noise scale and
the constant mean) can be learned by unconstrained gradient ascent on the
flat log-domain parameter vector.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .kernels import HyperParams, KernelCache, KernelSpec, composite_kernel, cross_covariances
from .linalg import (
    cholesky_with_jitter,
    chol_solve,
    log_det_from_chol,
    serial_blas,
    tri_solve,
)

__all__ = [
    "RegressionPosterior",
    "PredictiveGaussian",
    "fit_exact",
    "log_marginal_likelihood",
    "predict_regression",
]

LOG_2PI = float(np.log(2.0 * np.pi))

# round-off guard for predictive variances: clamp tiny negatives, reject real ones
_VAR_CLAMP = 1e-10


@dataclass(frozen=True)
class PredictiveGaussian:
    mean: float
    variance: float


@dataclass(frozen=True)
class RegressionPosterior:
    """Factorized posterior state needed for predictions."""

    X: np.ndarray
    spec: KernelSpec
    hp: HyperParams
    chol_L: np.ndarray  # lower factor of K + sn^2 I (jitter included)
    alpha: np.ndarray   # (K + sn^2 I)^-1 (y - m)
    jitter: float


def _check_inputs(X, y, hp) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be (N, D)")
    if y.shape != (X.shape[0],):
        raise ValueError(f"y must have shape ({X.shape[0]},), got {y.shape}")
    if not np.isfinite(y).all():
        raise ValueError("y must be finite")
    if hp.log_sigma_n is None:
        raise ValueError("regression requires a noise scale (log_sigma_n)")
    return X, y


def _noisy_gram(cache: KernelCache, hp: HyperParams) -> np.ndarray:
    kn = cache.gram(hp)
    kn[np.diag_indices_from(kn)] += np.exp(2.0 * hp.log_sigma_n)
    return kn


@serial_blas
def fit_exact(
    X: np.ndarray,
    y: np.ndarray,
    spec: KernelSpec,
    hp: HyperParams,
    cache: KernelCache | None = None,
) -> RegressionPosterior:
    """Factorize the noisy Gram matrix and solve for the residual weights."""
    X, y = _check_inputs(X, y, hp)
    if cache is None:
        cache = KernelCache(X, spec)
    kn = _noisy_gram(cache, hp)
    chol_l, jitter = cholesky_with_jitter(kn)
    # canonical layout so a reloaded model reproduces predictions bit-for-bit
    chol_l = np.ascontiguousarray(chol_l)
    alpha = chol_solve(chol_l, y - hp.mean_const)
    return RegressionPosterior(
        X=X, spec=spec, hp=hp, chol_L=chol_l, alpha=alpha, jitter=jitter
    )


@serial_blas
def log_marginal_likelihood(
    X: np.ndarray,
    y: np.ndarray,
    spec: KernelSpec,
    hp: HyperParams,
    cache: KernelCache | None = None,
) -> tuple[float, np.ndarray]:
    """Evidence of the noisy GP and its gradient over the flat parameters.

    The gradient covers every entry of ``hp.to_vector()``: amplitudes,
    bandwidths (if any), the noise scale, and the constant mean.
    """
    X, y = _check_inputs(X, y, hp)
    if cache is None:
        cache = KernelCache(X, spec)
    n = X.shape[0]
    kn = _noisy_gram(cache, hp)
    chol_l, _ = cholesky_with_jitter(kn)
    resid = y - hp.mean_const
    alpha = chol_solve(chol_l, resid)
    value = (
        -0.5 * float(resid @ alpha)
        - 0.5 * log_det_from_chol(chol_l)
        - 0.5 * n * LOG_2PI
    )

    kn_inv = chol_solve(chol_l, np.eye(n))
    t = np.outer(alpha, alpha) - kn_inv
    grad = np.zeros(hp.n_params)
    pos = 0
    n_kern = spec.n_kernels
    for s in range(n_kern):
        _, dk_dsf, dk_dell = cache.bag_gram_with_grads(hp, s)
        grad[pos + s] = 0.5 * float(np.sum(t * dk_dsf))
        if dk_dell is not None:
            grad[pos + n_kern + s] = 0.5 * float(np.sum(t * dk_dell))
    pos += n_kern * (2 if spec.has_bandwidth else 1)
    # d(Kn)/d(log sn) = 2 sn^2 I
    grad[pos] = np.exp(2.0 * hp.log_sigma_n) * float(np.trace(t))
    grad[pos + 1] = float(np.sum(alpha))
    return value, grad


def predict_regression(post: RegressionPosterior, x_star) -> PredictiveGaussian:
    """Predictive mean and variance of the latent function at one input."""
    x_star = np.asarray(x_star, dtype=float)
    k_star = cross_covariances(post.X, x_star, post.spec, post.hp)
    mean = post.hp.mean_const + float(k_star @ post.alpha)
    prior_var = composite_kernel(x_star, x_star, post.spec, post.hp)
    v = tri_solve(post.chol_L, k_star)
    variance = prior_var - float(v @ v)
    if variance < 0.0:
        if variance <= -_VAR_CLAMP:
            raise FloatingPointError(
                f"predictive variance {variance:g} is negative beyond round-off"
            )
        warnings.warn("clamping slightly negative predictive variance to 0")
        variance = 0.0
    return PredictiveGaussian(mean=mean, variance=variance)
