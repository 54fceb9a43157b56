"""Binary GP classification with a logistic likelihood.

Two approximate-inference routes are provided over the same latent model
(constant mean plus composite covariance, labels in {-1, +1}):

* :func:`laplace_fit` finds the posterior mode by Newton iteration and uses
  the local curvature as a Gaussian approximation.
* :func:`ep_fit` runs expectation propagation, approximating every logistic
  likelihood factor by a Gaussian site via moment matching.

Both return an approximate log marginal likelihood with analytic gradients
over all hyperparameters, so training reduces to smooth unconstrained
optimization.  Class probabilities average the sigmoid over the latent
predictive Gaussian by deterministic quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from .kernels import HyperParams, KernelCache, KernelSpec, composite_kernel, cross_covariances
from .linalg import (
    FactorizationError,
    cholesky_with_jitter,
    chol_solve,
    serial_blas,
    tri_solve,
)

__all__ = [
    "ConvergenceFailure",
    "SiteParams",
    "LatentPosterior",
    "PredictiveClass",
    "sigmoid",
    "log_sigmoid",
    "averaged_sigmoid",
    "laplace_fit",
    "ep_fit",
    "predict_proba",
]

_SQRT2 = math.sqrt(2.0)
_SQRT_PI = math.sqrt(math.pi)
_HALF_LOG_PI = 0.5 * math.log(math.pi)
_GH_X, _GH_W = np.polynomial.hermite.hermgauss(61)
_LOG_GH_W = np.log(_GH_W)
_GL_X, _GL_W = np.polynomial.legendre.leggauss(81)

# Above this latent standard deviation the Hermite grid gets too coarse for
# the logistic transition band, so the average switches to a two-panel
# Legendre rule over the band (split at the Gaussian center) plus the
# analytic saturation tail.  Worst-case error of the combination is ~2e-10.
_TAIL_SD = 2.0
_TAIL_EDGE = 40.0  # |f| beyond which the logistic saturates at double precision

_VAR_CLAMP = 1e-10

NEWTON_TOL = 1e-10
NEWTON_MAX_ITERS = 50
EP_TOL = 1e-6
EP_MAX_SWEEPS = 100
EP_DAMPING = 0.9


class ConvergenceFailure(RuntimeError):
    """Approximate inference failed (divergence, NaN, or sweep budget)."""


def sigmoid(z):
    return expit(z)


def log_sigmoid(z):
    return -np.logaddexp(0.0, -np.asarray(z, dtype=float))


def averaged_sigmoid(mean: float, variance: float) -> float:
    """Average of sigmoid(f) over f ~ N(mean, variance).

    Uses a 61-node Gauss-Hermite rule; for very wide Gaussians the sigmoid
    is integrated exactly on its saturation tails and by a Legendre rule on
    the transition band, which keeps the result accurate as variance grows
    without bound.
    """
    if variance < 0.0:
        raise ValueError("variance must be non-negative")
    if variance == 0.0:
        return float(expit(mean))
    sd = math.sqrt(variance)
    if sd <= _TAIL_SD:
        f = mean + _SQRT2 * sd * _GH_X
        return float(np.dot(_GH_W, expit(f)) / _SQRT_PI)
    lo, hi = -_TAIL_EDGE, _TAIL_EDGE
    split = min(max(mean, lo + 1e-9), hi - 1e-9)
    norm = sd * math.sqrt(2.0 * math.pi)
    total = 0.0
    for a, b in ((lo, split), (split, hi)):
        half = 0.5 * (b - a)
        f = 0.5 * (a + b) + half * _GL_X
        dens = np.exp(-0.5 * ((f - mean) / sd) ** 2) / norm
        total += half * float(np.dot(_GL_W, expit(f) * dens))
    total += float(ndtr((mean - hi) / sd))
    return min(max(total, 0.0), 1.0)


def _tilted_moments_hermite(y: float, mean: float, variance: float):
    # integrate in t = y f: the Gaussian weights are symmetric in the nodes
    t = y * mean + (_SQRT2 * math.sqrt(variance) * y) * _GH_X
    lw = _LOG_GH_W - np.logaddexp(0.0, -t)
    mx = lw.max()
    p = np.exp(lw - mx)
    z = p.sum()
    lz = mx + math.log(z) - _HALF_LOG_PI
    m1 = float(p @ t) / z
    d = t - m1
    v = float(p @ (d * d)) / z
    return lz, y * m1, v


def _tilted_moments(y: float, mean: float, variance: float):
    """Moments of the tilted density sigmoid(y f) N(f | mean, variance).

    Returns (log normalizer, tilted mean, tilted variance).  A Gauss-Hermite
    rule covers narrow Gaussians; wide ones integrate the sigmoid's
    transition band with a two-panel Legendre rule plus analytic Gaussian
    tail moments, keeping the moment identities that the evidence gradient
    relies on accurate at every scale.  This sits on the hot path of every
    EP sweep.
    """
    sd = math.sqrt(variance)
    if sd <= _TAIL_SD:
        return _tilted_moments_hermite(y, mean, variance)
    # reflect so the likelihood is sigmoid(+f); un-reflect the mean at the end
    mu = y * mean
    lo, hi = -_TAIL_EDGE, _TAIL_EDGE
    split = min(max(mu, lo + 1e-9), hi - 1e-9)
    norm = sd * math.sqrt(2.0 * math.pi)
    z = 0.0
    m1c = 0.0  # centered first moment, E[(f - mu) lam]
    m2c = 0.0
    inv = -0.5 / variance
    for a, b in ((lo, split), (split, hi)):
        half = 0.5 * (b - a)
        f = 0.5 * (a + b) + half * _GL_X
        g = f - mu
        core = expit(f) * np.exp(inv * g * g)
        cg = core * g
        scale = half / norm
        z += scale * float(np.dot(_GL_W, core))
        m1c += scale * float(np.dot(_GL_W, cg))
        m2c += scale * float(np.dot(_GL_W, cg * g))
    # upper saturation tail: sigmoid is 1 there to double precision
    u = (hi - mu) / sd
    phi_u = math.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
    tail0 = float(ndtr(-u))
    z += tail0
    m1c += sd * phi_u
    m2c += variance * (tail0 + u * phi_u)
    if not z > 1e-280:
        return _tilted_moments_hermite(y, mean, variance)
    m1 = m1c / z
    v = m2c / z - m1 * m1
    return math.log(z), y * (mu + m1), v


@dataclass(frozen=True)
class SiteParams:
    """Per-observation Gaussian likelihood approximations held by EP."""

    z_tilde: np.ndarray
    mu_tilde: np.ndarray
    sigma2_tilde: np.ndarray


@dataclass(frozen=True)
class PredictiveClass:
    latent_mean: float
    latent_var: float
    probability: float


@dataclass(frozen=True)
class LatentPosterior:
    """Gaussian approximation of the latent posterior, ready for prediction.

    ``pred_alpha``, ``sqrt_w`` and ``chol_B`` encode the predictive
    equations shared by both methods: the latent mean at a test point is
    ``mean_const + k_*' pred_alpha`` and the variance is
    ``k_** - |L^-1 (sqrt_w * k_*)|^2``.
    """

    method: str  # "LA" or "EP"
    f_hat: np.ndarray
    pred_alpha: np.ndarray
    sqrt_w: np.ndarray
    chol_B: np.ndarray
    approx_lml: float
    X: np.ndarray
    spec: KernelSpec
    hp: HyperParams
    sites: SiteParams | None = None


def _check_class_inputs(X, y, hp):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be (N, D)")
    if y.shape != (X.shape[0],):
        raise ValueError(f"y must have shape ({X.shape[0]},), got {y.shape}")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if hp.log_sigma_n is not None:
        raise ValueError("classification carries no observation noise scale")
    return X, y


def _kernel_param_gradient(cache, hp, spec, t_matrix):
    """Gradient entries 0.5 * sum(T * dK/dtheta) over all kernel parameters."""
    n_kern = spec.n_kernels
    grad = np.zeros(hp.n_params)
    for s in range(n_kern):
        _, dk_dsf, dk_dell = cache.bag_gram_with_grads(hp, s)
        grad[s] = 0.5 * float(np.sum(t_matrix * dk_dsf))
        if dk_dell is not None:
            grad[n_kern + s] = 0.5 * float(np.sum(t_matrix * dk_dell))
    return grad


@serial_blas
def laplace_fit(
    X: np.ndarray,
    y: np.ndarray,
    spec: KernelSpec,
    hp: HyperParams,
    cache: KernelCache | None = None,
    compute_grad: bool = True,
) -> tuple[LatentPosterior, np.ndarray | None]:
    """Newton mode finding plus a curvature-based Gaussian approximation."""
    X, y = _check_class_inputs(X, y, hp)
    if cache is None:
        cache = KernelCache(X, spec)
    n = X.shape[0]
    k = cache.gram(hp)
    if not np.isfinite(k).all():
        raise ConvergenceFailure("covariance matrix is not finite at these hyperparameters")
    m = hp.mean_const
    t = 0.5 * (y + 1.0)

    f = np.full(n, m)
    a = np.zeros(n)
    psi = float(np.sum(log_sigmoid(y * f)))
    converged = False
    chol_b = np.eye(n)
    sw = np.zeros(n)
    for _ in range(NEWTON_MAX_ITERS):
        pi = expit(f)
        g = t - pi
        residual = float(np.max(np.abs(g - a)))
        if residual < NEWTON_TOL:
            converged = True
            break
        w = pi * (1.0 - pi)
        sw = np.sqrt(w)
        b_mat = np.eye(n) + sw[:, None] * k * sw[None, :]
        try:
            chol_b, _ = cholesky_with_jitter(b_mat)
        except FactorizationError as exc:
            raise ConvergenceFailure(f"Laplace curvature factorization failed: {exc}")
        rhs = w * (f - m) + g
        a_new = rhs - sw * chol_solve(chol_b, sw * (k @ rhs))
        # backtrack towards the previous iterate if the full step overshoots
        step = 1.0
        for _ in range(30):
            a_try = a + step * (a_new - a)
            f_try = m + k @ a_try
            psi_try = float(np.sum(log_sigmoid(y * f_try))) - 0.5 * float(
                a_try @ (f_try - m)
            )
            if np.isfinite(psi_try) and psi_try >= psi - 1e-12:
                break
            step *= 0.5
        else:
            raise ConvergenceFailure("Laplace Newton step failed to make progress")
        a, f, psi = a_try, f_try, psi_try
    if not converged:
        raise ConvergenceFailure(
            f"Laplace Newton did not reach tolerance {NEWTON_TOL:g} in "
            f"{NEWTON_MAX_ITERS} iterations"
        )

    pi = expit(f)
    w = pi * (1.0 - pi)
    sw = np.sqrt(w)
    b_mat = np.eye(n) + sw[:, None] * k * sw[None, :]
    try:
        chol_b, _ = cholesky_with_jitter(b_mat)
    except FactorizationError as exc:
        raise ConvergenceFailure(f"Laplace curvature factorization failed: {exc}")
    lml = (
        float(np.sum(log_sigmoid(y * f)))
        - 0.5 * float(a @ (f - m))
        - float(np.sum(np.log(np.diag(chol_b))))
    )
    post = LatentPosterior(
        method="LA",
        f_hat=f,
        pred_alpha=a.copy(),
        sqrt_w=sw,
        chol_B=np.ascontiguousarray(chol_b),
        approx_lml=lml,
        X=X,
        spec=spec,
        hp=hp,
    )
    if not compute_grad:
        return post, None

    # gradient: explicit covariance terms plus the implicit shift of the mode
    z_mat = sw[:, None] * chol_solve(chol_b, np.diag(sw))  # (K + W^-1)^-1
    c = tri_solve(chol_b, sw[:, None] * k)
    post_diag = np.diag(k) - np.einsum("ij,ij->j", c, c)  # diag of (K^-1 + W)^-1
    dw_df = pi * (1.0 - pi) * (1.0 - 2.0 * pi)
    s2 = -0.5 * post_diag * dw_df
    g = t - pi

    grad = np.zeros(hp.n_params)
    n_kern = spec.n_kernels
    for s in range(n_kern):
        _, dk_dsf, dk_dell = cache.bag_gram_with_grads(hp, s)
        for off, dk in ((s, dk_dsf), (n_kern + s, dk_dell)):
            if dk is None:
                continue
            s1 = 0.5 * float(a @ dk @ a) - 0.5 * float(np.sum(z_mat * dk))
            bvec = dk @ g
            s3 = bvec - k @ (z_mat @ bvec)
            grad[off] = s1 + float(s2 @ s3)
    ones = np.ones(n)
    grad[-1] = float(np.sum(a)) + float(s2 @ (ones - k @ (z_mat @ ones)))
    return post, grad


def _ep_posterior_from_sites(k, tau, nu):
    sw = np.sqrt(tau)
    n = k.shape[0]
    b_mat = np.eye(n) + sw[:, None] * k * sw[None, :]
    try:
        chol_b, _ = cholesky_with_jitter(b_mat)
    except FactorizationError as exc:
        raise ConvergenceFailure(f"EP posterior factorization failed: {exc}")
    v = tri_solve(chol_b, sw[:, None] * k)
    sigma = k - v.T @ v
    sigma = 0.5 * (sigma + sigma.T)
    mu = sigma @ nu
    return sigma, mu, chol_b, sw


@serial_blas
def ep_fit(
    X: np.ndarray,
    y: np.ndarray,
    spec: KernelSpec,
    hp: HyperParams,
    cache: KernelCache | None = None,
    compute_grad: bool = True,
    tol: float = EP_TOL,
    max_sweeps: int = EP_MAX_SWEEPS,
    damping: float = EP_DAMPING,
) -> tuple[LatentPosterior, np.ndarray | None]:
    """Expectation propagation with damped sequential site updates.

    Sites are visited in ascending index order (deterministic).  The fit is
    declared converged once a full sweep moves every site parameter by less
    than ``tol`` (scaled); NaNs, impossible cavities, or exhausting the
    sweep budget raise :class:`ConvergenceFailure`.

    Updates step a fraction ``damping`` towards the full moment match.
    Strongly conflicted instances can oscillate past the sweep budget; the
    resulting failure is the caller's cue to fall back to the Laplace
    route, mirroring how unstable runs are handled across a CV study.
    """
    X, y = _check_class_inputs(X, y, hp)
    if cache is None:
        cache = KernelCache(X, spec)
    n = X.shape[0]
    k = cache.gram(hp)
    if not np.isfinite(k).all():
        raise ConvergenceFailure("covariance matrix is not finite at these hyperparameters")
    m = hp.mean_const

    tau = np.zeros(n)
    nu = np.zeros(n)
    sigma = k.copy()
    mu = np.zeros(n)  # posterior over the centered latent h = f - m
    prev_nu = None
    prev_tau = None
    converged = False
    chol_b = np.eye(n)
    sw = np.zeros(n)

    y_list = y.tolist()
    outer_buf = np.empty((n, n))
    for sweep in range(max_sweeps):
        skipped = 0
        for i in range(n):
            sigma_ii = float(sigma[i, i])
            if not math.isfinite(sigma_ii) or sigma_ii <= 0.0:
                raise ConvergenceFailure("EP posterior variance became invalid")
            tau_i = float(tau[i])
            mu_i = float(mu[i])
            tau_cav = 1.0 / sigma_ii - tau_i
            nu_cav = mu_i / sigma_ii - float(nu[i])
            if not math.isfinite(tau_cav) or tau_cav <= 0.0:
                skipped += 1
                continue
            cav_var = 1.0 / tau_cav
            cav_mean = nu_cav / tau_cav
            _, tmean, tvar = _tilted_moments(y_list[i], cav_mean + m, cav_var)
            if not (math.isfinite(tmean) and math.isfinite(tvar)) or tvar <= 0.0:
                skipped += 1
                continue
            dtau_full = (1.0 / tvar - tau_cav) - tau_i
            dnu_full = ((tmean - m) / tvar - nu_cav) - float(nu[i])
            tau_new = tau_i + damping * dtau_full
            nu_new = float(nu[i]) + damping * dnu_full
            if tau_new < 0.0:
                tau_new = 0.0
                nu_new = 0.0
            dtau = tau_new - tau_i
            dnu = nu_new - float(nu[i])
            tau[i] = tau_new
            nu[i] = nu_new
            denom = 1.0 + dtau * sigma_ii
            if not math.isfinite(denom) or denom <= 0.0:
                raise ConvergenceFailure("EP rank-one update became unstable")
            col = sigma[:, i].copy()
            np.multiply((dtau / denom) * col, col[:, None], out=outer_buf)
            sigma -= outer_buf
            mu += ((dnu - dtau * mu_i) / denom) * col
        if not (np.isfinite(tau).all() and np.isfinite(nu).all()):
            raise ConvergenceFailure("EP site parameters became non-finite")
        sigma, mu, chol_b, sw = _ep_posterior_from_sites(k, tau, nu)
        if not (np.isfinite(sigma).all() and np.isfinite(mu).all()):
            raise ConvergenceFailure("EP posterior became non-finite")
        if (tau > 0.0).all() and skipped == 0:
            # scaled change of the natural site parameters: absolute for
            # O(1) sites, relative for extreme ones.  (Mean/variance form
            # would amplify quadrature round-off for nearly-uninformative
            # sites, whose precision is a tiny difference of large numbers.)
            if prev_nu is not None:
                d_tau = np.abs(tau - prev_tau) / (1.0 + prev_tau)
                d_nu = np.abs(nu - prev_nu) / (1.0 + np.abs(prev_nu))
                if max(float(d_tau.max()), float(d_nu.max())) < tol:
                    converged = True
                    break
            prev_nu, prev_tau = nu.copy(), tau.copy()
        else:
            prev_nu = prev_tau = None
    if not converged:
        raise ConvergenceFailure(
            f"EP did not converge within {max_sweeps} sweeps"
        )

    # final cavities, consistent with the converged posterior
    diag = np.diag(sigma)
    tau_cav = 1.0 / diag - tau
    if (tau_cav <= 0.0).any() or not np.isfinite(tau_cav).all():
        raise ConvergenceFailure("EP finished with invalid cavity precisions")
    cav_var = 1.0 / tau_cav
    cav_mean = (mu / diag - nu) * cav_var
    log_zhat = np.empty(n)
    for i in range(n):
        log_zhat[i], _, _ = _tilted_moments(y[i], cav_mean[i] + m, cav_var[i])

    w_mu = nu / np.sqrt(tau)
    r = cav_mean * np.sqrt(tau) - w_mu
    one_plus = 1.0 + tau * cav_var
    binv_wmu = chol_solve(chol_b, w_mu)
    lml = float(
        np.sum(log_zhat)
        + 0.5 * np.sum(np.log(one_plus))
        + 0.5 * np.sum(r * r / one_plus)
        - np.sum(np.log(np.diag(chol_b)))
        - 0.5 * w_mu @ binv_wmu
    )

    pred_alpha = sw * binv_wmu  # equals (K + S^-1)^-1 mu_tilde
    # site amplitudes are diagnostics only; saturate instead of overflowing
    log_amp = (
        log_zhat
        + 0.5 * np.log(2.0 * math.pi * (cav_var + 1.0 / tau))
        + (cav_mean - nu / tau) ** 2 / (2.0 * (cav_var + 1.0 / tau))
    )
    site_amp = np.exp(np.minimum(log_amp, 700.0))
    sites = SiteParams(
        z_tilde=site_amp, mu_tilde=nu / tau, sigma2_tilde=1.0 / tau
    )
    post = LatentPosterior(
        method="EP",
        f_hat=mu + m,
        pred_alpha=pred_alpha,
        sqrt_w=sw,
        chol_B=np.ascontiguousarray(chol_b),
        approx_lml=lml,
        X=X,
        spec=spec,
        hp=hp,
        sites=sites,
    )
    if not compute_grad:
        return post, None

    # gradient with sites held fixed: same trace identities as regression,
    # with the site means acting as pseudo-targets and S^-1 as pseudo-noise
    binv = chol_solve(chol_b, np.eye(n))
    a_mat = sw[:, None] * binv * sw[None, :]
    t_mat = np.outer(pred_alpha, pred_alpha) - a_mat
    grad = _kernel_param_gradient(cache, hp, spec, t_mat)
    grad[-1] = float(np.sum(pred_alpha))
    return post, grad


def predict_proba(post: LatentPosterior, x_star) -> PredictiveClass:
    """Averaged predictive class probability at one test input."""
    x_star = np.asarray(x_star, dtype=float)
    k_star = cross_covariances(post.X, x_star, post.spec, post.hp)
    mean = post.hp.mean_const + float(k_star @ post.pred_alpha)
    prior_var = composite_kernel(x_star, x_star, post.spec, post.hp)
    v = tri_solve(post.chol_B, post.sqrt_w * k_star)
    var = prior_var - float(v @ v)
    if var < 0.0:
        if var <= -_VAR_CLAMP:
            raise FloatingPointError(
                f"latent predictive variance {var:g} is negative beyond round-off"
            )
        var = 0.0
    return PredictiveClass(
        latent_mean=mean,
        latent_var=var,
        probability=averaged_sigmoid(mean, var),
    )
