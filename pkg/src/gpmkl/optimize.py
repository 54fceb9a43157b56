"""Hyperparameter training: L-BFGS over the negative approximate evidence.

The optimizer is a limited-memory quasi-Newton method with a strong-Wolfe
line search.  It is deterministic: no randomized restarts unless a seed and
restart count are requested explicitly.  ``train`` wires the optimizer to
the regression or classification evidence and handles the EP-to-Laplace
fallback when expectation propagation refuses to converge at some point of
the search.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gp_classification import (
    ConvergenceFailure,
    LatentPosterior,
    ep_fit,
    laplace_fit,
)
from .gp_regression import RegressionPosterior, fit_exact, log_marginal_likelihood
from .kernels import HyperParams, KernelCache, KernelSpec
from .linalg import FactorizationError

__all__ = [
    "OptimizeOptions",
    "MinimizeResult",
    "TrainedModel",
    "minimize",
    "default_hyperparams",
    "train",
]

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]

# largest per-coordinate move tried by the first step of a line search
_MAX_FIRST_STEP = 5.0


@dataclass(frozen=True)
class OptimizeOptions:
    max_iters: int = 100
    grad_tol: float = 1e-5          # infinity norm
    wolfe_c1: float = 1e-4          # sufficient decrease
    wolfe_c2: float = 0.9           # curvature
    memory: int = 10
    seed: int | None = None
    n_restarts: int = 0

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grad_tol <= 0 or not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("invalid tolerance or Wolfe constants")


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    line_search_failed: bool
    n_evals: int


def _cubic_step(a_lo, f_lo, g_lo, a_hi, f_hi) -> float:
    """Minimizer of the cubic through (a_lo, f_lo, g_lo) and (a_hi, f_hi).

    Falls back to bisection when the interpolant is degenerate.
    """
    d = a_hi - a_lo
    if d == 0.0:
        return a_lo
    # quadratic interpolation using f_lo, g_lo, f_hi
    denom = 2.0 * (f_hi - f_lo - g_lo * d)
    if denom != 0.0 and np.isfinite(denom):
        step = a_lo - g_lo * d * d / denom
        lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
        margin = 0.1 * abs(d)
        if np.isfinite(step) and lo + margin <= step <= hi - margin:
            return step
    return 0.5 * (a_lo + a_hi)


class _LineSearch:
    """Strong-Wolfe line search (bracket and zoom)."""

    def __init__(self, fg, x, f0, g0, direction, c1, c2, alpha0=1.0, max_steps=40):
        self.fg = fg
        self.x = x
        self.f0 = f0
        self.d = direction
        self.c1 = c1
        self.c2 = c2
        self.alpha0 = alpha0
        self.slope0 = float(g0 @ direction)
        self.max_steps = max_steps

    def _phi(self, alpha):
        f, g = self.fg(self.x + alpha * self.d)
        return f, g, float(g @ self.d)

    def search(self):
        """Returns (alpha, f, g) or None when no Wolfe point was found."""
        c1, c2, slope0 = self.c1, self.c2, self.slope0
        alpha_prev, f_prev, slope_prev = 0.0, self.f0, slope0
        alpha = self.alpha0
        for it in range(self.max_steps):
            f, g, slope = self._phi(alpha)
            armijo = f <= self.f0 + c1 * alpha * slope0
            if not np.isfinite(f) or not armijo or (it > 0 and f >= f_prev):
                return self._zoom(alpha_prev, f_prev, slope_prev, alpha, f)
            if abs(slope) <= -c2 * slope0:
                return alpha, f, g
            if slope >= 0.0:
                return self._zoom(alpha, f, slope, alpha_prev, f_prev)
            alpha_prev, f_prev, slope_prev = alpha, f, slope
            alpha *= 2.0
        return None

    def _zoom(self, a_lo, f_lo, slope_lo, a_hi, f_hi):
        c1, c2, slope0 = self.c1, self.c2, self.slope0
        for it in range(self.max_steps):
            if it % 2:
                alpha = 0.5 * (a_lo + a_hi)  # guaranteed geometric shrink
            else:
                alpha = _cubic_step(a_lo, f_lo, slope_lo, a_hi, f_hi)
            f, g, slope = self._phi(alpha)
            if not np.isfinite(f) or f > self.f0 + c1 * alpha * slope0 or f >= f_lo:
                a_hi, f_hi = alpha, f
            else:
                if abs(slope) <= -c2 * slope0:
                    return alpha, f, g
                if slope * (a_hi - a_lo) >= 0.0:
                    a_hi, f_hi = a_lo, f_lo
                a_lo, f_lo, slope_lo = alpha, f, slope
            if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
                break
        return None


def _lbfgs(fg: Objective, x0: np.ndarray, opts: OptimizeOptions) -> MinimizeResult:
    x = np.asarray(x0, dtype=float).copy()
    f, g = fg(x)
    if not np.isfinite(f) or not np.isfinite(g).all():
        raise ValueError("objective is not finite at the starting point")
    n_evals = 1
    best_x, best_f = x.copy(), f

    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    line_search_failed = False
    converged = False
    iterations = 0

    def count_fg(z):
        nonlocal n_evals, best_x, best_f
        fv, gv = fg(z)
        n_evals += 1
        if np.isfinite(fv) and fv < best_f:
            best_f, best_x = fv, z.copy()
        return fv, gv

    for it in range(opts.max_iters):
        if float(np.max(np.abs(g))) <= opts.grad_tol:
            converged = True
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, yv, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * yv
        if y_hist:
            gamma = float(s_hist[-1] @ y_hist[-1]) / float(y_hist[-1] @ y_hist[-1])
            q *= gamma
        for (s, yv, rho), a in zip(
            zip(s_hist, y_hist, rho_hist), reversed(alphas)
        ):
            b = rho * float(yv @ q)
            q += (a - b) * s
        direction = -q
        if float(g @ direction) >= 0.0:
            # history produced a non-descent direction: reset
            s_hist.clear()
            y_hist.clear()
            rho_hist.clear()
            direction = -g
        # with curvature history the unit step is properly scaled; without
        # it, keep the first trial inside a sane log-domain step to stay
        # clear of the overflow cliffs of exponentiated parameters
        if s_hist:
            alpha0 = 1.0
        else:
            alpha0 = min(
                1.0, _MAX_FIRST_STEP / max(float(np.max(np.abs(direction))), 1e-300)
            )
        ls = _LineSearch(
            count_fg, x, f, g, direction, opts.wolfe_c1, opts.wolfe_c2, alpha0
        )
        result = ls.search()
        iterations = it + 1
        if result is None and s_hist:
            # stale curvature can produce hopeless directions: retry once
            # along the raw gradient before giving up
            s_hist.clear()
            y_hist.clear()
            rho_hist.clear()
            direction = -g
            alpha0 = min(1.0, _MAX_FIRST_STEP / max(float(np.max(np.abs(direction))), 1e-300))
            ls = _LineSearch(
                count_fg, x, f, g, direction, opts.wolfe_c1, opts.wolfe_c2, alpha0
            )
            result = ls.search()
        if result is None:
            line_search_failed = True
            break
        alpha, f_new, g_new = result
        step = alpha * direction
        yv = g_new - g
        sty = float(step @ yv)
        if sty > 1e-12 * float(np.linalg.norm(step)) * float(np.linalg.norm(yv)):
            s_hist.append(step)
            y_hist.append(yv)
            rho_hist.append(1.0 / sty)
            if len(s_hist) > opts.memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x = x + step
        f, g = f_new, g_new
        if f < best_f:
            best_f, best_x = f, x.copy()
    else:
        iterations = opts.max_iters
    if not converged and not line_search_failed:
        # one last convergence check at the final iterate
        converged = float(np.max(np.abs(g))) <= opts.grad_tol
    return MinimizeResult(
        x=best_x,
        fun=best_f,
        iterations=iterations,
        converged=converged,
        line_search_failed=line_search_failed,
        n_evals=n_evals,
    )


def minimize(
    objective: Objective, x0: np.ndarray, opts: OptimizeOptions | None = None
) -> MinimizeResult:
    """Minimize a smooth value-and-gradient objective.

    Always returns the best point evaluated, so ``result.fun <= f(x0)``.
    A failed line search terminates the run with the best point so far and
    sets ``line_search_failed`` instead of raising.
    """
    opts = opts or OptimizeOptions()
    result = _lbfgs(objective, x0, opts)
    if opts.n_restarts > 0 and opts.seed is not None:
        rng = np.random.default_rng(opts.seed)
        for _ in range(opts.n_restarts):
            start = np.asarray(x0, float) + rng.standard_normal(len(x0))
            try:
                cand = _lbfgs(objective, start, opts)
            except ValueError:
                continue
            if cand.fun < result.fun:
                result = cand
    return result


@dataclass(frozen=True)
class TrainedModel:
    task: str  # "regression" or "binary-classification"
    spec: KernelSpec
    hp: HyperParams
    posterior: RegressionPosterior | LatentPosterior
    lml: float
    inference_used: str  # "exact", "EP" or "LA"
    fallback_triggered: bool = False
    optimizer: MinimizeResult | None = field(default=None, compare=False)


def default_hyperparams(
    X: np.ndarray, y: np.ndarray, spec: KernelSpec, task: str
) -> HyperParams:
    """Conventional starting point for the optimizer.

    Amplitudes start at 1; bandwidths at the median pairwise distance within
    each bag; the noise scale at half the target spread (a fixed small value
    tends to start inside a bandwidth-collapse basin); the mean at the
    target average for regression and 0 for classification.
    """
    X = np.asarray(X, dtype=float)
    n_kern = spec.n_kernels
    log_ell = None
    if spec.has_bandwidth:
        log_ell = np.zeros(n_kern)
        iu = np.triu_indices(X.shape[0], k=1)
        for s, bag in enumerate(spec.layout.bags):
            xs = X[:, bag]
            if iu[0].size == 0:
                med = 1.0
            else:
                d2 = (
                    np.sum(xs * xs, axis=1)[:, None]
                    + np.sum(xs * xs, axis=1)[None, :]
                    - 2.0 * xs @ xs.T
                )
                med = float(np.sqrt(np.maximum(np.median(d2[iu]), 0.0)))
            log_ell[s] = np.log(med) if med > 0.0 else 0.0
    if task == "regression":
        spread = float(np.std(np.asarray(y, dtype=float)))
        noise0 = 0.5 * spread if spread > 0.0 else 0.1
        return HyperParams(
            log_sigma_f=np.zeros(n_kern),
            log_ell=log_ell,
            log_sigma_n=float(np.log(noise0)),
            mean_const=float(np.mean(y)),
        )
    return HyperParams(
        log_sigma_f=np.zeros(n_kern),
        log_ell=log_ell,
        log_sigma_n=None,
        mean_const=0.0,
    )


def _train_once(X, y, spec, init_hp, task, opts, method):
    """One optimization run with a fixed inference method.

    EP convergence failures propagate so the caller can fall back to the
    Laplace route.  For the exact and Laplace objectives a numerically
    infeasible trial point (overflowed covariance, failed factorization)
    is reported as +inf so the line search simply backs away from it.
    """
    cache = KernelCache(X, spec)
    n_params = init_hp.n_params

    if task == "regression":
        def objective(vec):
            hp = init_hp.with_vector(vec)
            try:
                val, grad = log_marginal_likelihood(X, y, spec, hp, cache=cache)
            except FactorizationError:
                return np.inf, np.zeros(n_params)
            return -val, -grad
    elif method == "EP":
        def objective(vec):
            hp = init_hp.with_vector(vec)
            post, grad = ep_fit(X, y, spec, hp, cache=cache)
            return -post.approx_lml, -grad
    else:
        def objective(vec):
            hp = init_hp.with_vector(vec)
            try:
                post, grad = laplace_fit(X, y, spec, hp, cache=cache)
            except (ConvergenceFailure, FactorizationError):
                return np.inf, np.zeros(n_params)
            return -post.approx_lml, -grad

    result = minimize(objective, init_hp.to_vector(), opts)
    hp_opt = init_hp.with_vector(result.x)
    if task == "regression":
        posterior = fit_exact(X, y, spec, hp_opt, cache=cache)
        val, _ = log_marginal_likelihood(X, y, spec, hp_opt, cache=cache)
        return hp_opt, posterior, val, result
    fitter = ep_fit if method == "EP" else laplace_fit
    posterior, _ = fitter(X, y, spec, hp_opt, cache=cache, compute_grad=False)
    return hp_opt, posterior, posterior.approx_lml, result


def train(
    X: np.ndarray,
    y: np.ndarray,
    spec: KernelSpec,
    init_hp: HyperParams | None = None,
    task: str = "binary-classification",
    opts: OptimizeOptions | None = None,
    inference: str = "ep",
) -> TrainedModel:
    """Fit all hyperparameters by maximizing the (approximate) evidence.

    Classification attempts EP first (unless ``inference="la"``); if EP
    fails to converge at any optimizer step the whole run restarts with the
    Laplace approximation and the returned model is flagged accordingly.
    """
    if task not in ("regression", "binary-classification"):
        raise ValueError(f"unknown task {task!r}")
    if inference not in ("ep", "la"):
        raise ValueError(f"unknown inference {inference!r}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    opts = opts or OptimizeOptions()
    if init_hp is None:
        init_hp = default_hyperparams(X, y, spec, task)

    if task == "regression":
        hp_opt, posterior, lml, result = _train_once(
            X, y, spec, init_hp, task, opts, "exact"
        )
        return TrainedModel(
            task=task,
            spec=spec,
            hp=hp_opt,
            posterior=posterior,
            lml=lml,
            inference_used="exact",
            optimizer=result,
        )

    fallback = False
    method = "EP" if inference == "ep" else "LA"
    if method == "EP":
        try:
            hp_opt, posterior, lml, result = _train_once(
                X, y, spec, init_hp, task, opts, "EP"
            )
            return TrainedModel(
                task=task,
                spec=spec,
                hp=hp_opt,
                posterior=posterior,
                lml=lml,
                inference_used="EP",
                optimizer=result,
            )
        except ConvergenceFailure:
            fallback = True
    hp_opt, posterior, lml, result = _train_once(
        X, y, spec, init_hp, task, opts, "LA"
    )
    if not np.isfinite(lml):
        raise ConvergenceFailure("Laplace fallback produced a non-finite evidence")
    return TrainedModel(
        task=task,
        spec=spec,
        hp=hp_opt,
        posterior=posterior,
        lml=lml,
        inference_used="LA",
        fallback_triggered=fallback,
        optimizer=result,
    )
