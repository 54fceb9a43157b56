"""Basis covariance functions, conic sums over feature bags, and gradients.

Three basis kernels are supported, all sharing one kind inside a composite:

* ``lin``  k(a, b) = sf^2 * (a . b)
* ``se``   k(a, b) = sf^2 * exp(-|a - b|^2 / (2 l^2))
* ``nn``   k(a, b) = sf^2 * asin(2 a~' S b~ / sqrt((1 + 2 a~' S a~)(1 + 2 b~' S b~)))
           with a~ = (1, a) the augmented input and S = l^-2 I.

A composite covariance assigns one basis kernel to every bag of a
:class:`~gpmkl.subspaces.SubspaceLayout` and sums the per-bag values.  The
squared amplitudes sf_s^2 act as non-negative mixing weights, so driving an
amplitude to zero prunes the bag from the model.  All positive parameters
are stored in the log domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .subspaces import SubspaceLayout

__all__ = [
    "KINDS",
    "HyperParams",
    "KernelSpec",
    "GramMatrix",
    "kernel_lin",
    "kernel_se",
    "kernel_nn",
    "composite_kernel",
    "gram",
    "gram_gradient",
    "cross_covariances",
    "KernelCache",
]

KINDS = ("lin", "se", "nn")


@dataclass(frozen=True)
class HyperParams:
    """Log-domain kernel hyperparameters plus constant-mean value.

    ``log_sigma_f`` has one amplitude per basis kernel.  ``log_ell`` is
    present for bandwidth kinds (se, nn) and ``None`` for lin.
    ``log_sigma_n`` is the observation-noise scale (regression only).
    """

    log_sigma_f: np.ndarray
    log_ell: np.ndarray | None = None
    log_sigma_n: float | None = None
    mean_const: float = 0.0

    def __post_init__(self) -> None:
        sf = np.atleast_1d(np.asarray(self.log_sigma_f, dtype=float))
        object.__setattr__(self, "log_sigma_f", sf)
        if not np.isfinite(sf).all():
            raise ValueError("log_sigma_f entries must be finite")
        if self.log_ell is not None:
            le = np.atleast_1d(np.asarray(self.log_ell, dtype=float))
            object.__setattr__(self, "log_ell", le)
            if le.shape != sf.shape:
                raise ValueError("log_ell must match log_sigma_f in length")
            if not np.isfinite(le).all():
                raise ValueError("log_ell entries must be finite")
        if self.log_sigma_n is not None and not np.isfinite(self.log_sigma_n):
            raise ValueError("log_sigma_n must be finite")
        if not np.isfinite(self.mean_const):
            raise ValueError("mean_const must be finite")

    @property
    def n_kernels(self) -> int:
        return self.log_sigma_f.size

    @property
    def n_params(self) -> int:
        n = self.log_sigma_f.size
        if self.log_ell is not None:
            n += self.log_ell.size
        if self.log_sigma_n is not None:
            n += 1
        return n + 1  # mean_const

    def to_vector(self) -> np.ndarray:
        """Flat parameter vector: amplitudes, bandwidths, noise, mean."""
        parts = [self.log_sigma_f]
        if self.log_ell is not None:
            parts.append(self.log_ell)
        if self.log_sigma_n is not None:
            parts.append(np.array([self.log_sigma_n]))
        parts.append(np.array([self.mean_const]))
        return np.concatenate(parts)

    def with_vector(self, vec: np.ndarray) -> "HyperParams":
        """Rebuild hyperparameters of this shape from a flat vector."""
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.n_params:
            raise ValueError(f"expected {self.n_params} entries, got {vec.size}")
        s = self.n_kernels
        log_ell = None
        pos = s
        if self.log_ell is not None:
            log_ell = vec[pos : pos + s].copy()
            pos += s
        log_sigma_n = None
        if self.log_sigma_n is not None:
            log_sigma_n = float(vec[pos])
            pos += 1
        return HyperParams(
            log_sigma_f=vec[:s].copy(),
            log_ell=log_ell,
            log_sigma_n=log_sigma_n,
            mean_const=float(vec[pos]),
        )

    def param_labels(self) -> list[str]:
        labels = [f"log_sigma_f[{s}]" for s in range(self.n_kernels)]
        if self.log_ell is not None:
            labels += [f"log_ell[{s}]" for s in range(self.n_kernels)]
        if self.log_sigma_n is not None:
            labels.append("log_sigma_n")
        labels.append("mean_const")
        return labels


@dataclass(frozen=True)
class KernelSpec:
    """A basis-kernel kind together with the bag layout it acts on."""

    kind: str
    layout: SubspaceLayout

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}, expected one of {KINDS}")
        if self.kind != "lin":
            # two parameters per basis kernel: keep the total parameter count
            # below the D+1 budget of a per-dimension relevance model
            s, d = self.layout.n_bags, self.layout.n_features
            if 2 * s >= d + 1:
                raise ValueError(
                    f"{s} two-parameter basis kernels exceed the budget for "
                    f"{d} features (need S < (D+1)/2)"
                )

    @property
    def n_kernels(self) -> int:
        return self.layout.n_bags

    @property
    def has_bandwidth(self) -> bool:
        return self.kind != "lin"

    def default_hyperparams(
        self, with_noise: bool, mean_const: float = 0.0
    ) -> HyperParams:
        s = self.n_kernels
        return HyperParams(
            log_sigma_f=np.zeros(s),
            log_ell=np.zeros(s) if self.has_bandwidth else None,
            log_sigma_n=float(np.log(0.1)) if with_noise else None,
            mean_const=mean_const,
        )


@dataclass(frozen=True)
class GramMatrix:
    """Dense symmetric matrix of covariances over training inputs."""

    n: int
    values: np.ndarray


def _check_pair(xi, xj) -> tuple[np.ndarray, np.ndarray]:
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    if xi.ndim != 1 or xj.ndim != 1:
        raise ValueError("kernel inputs must be 1-D vectors")
    if xi.shape != xj.shape:
        raise ValueError(f"dimension mismatch: {xi.shape} vs {xj.shape}")
    if not (np.isfinite(xi).all() and np.isfinite(xj).all()):
        raise ValueError("kernel inputs must be finite")
    return xi, xj


def kernel_lin(xi, xj, log_sigma_f: float) -> float:
    """Linear covariance sf^2 * (xi . xj)."""
    xi, xj = _check_pair(xi, xj)
    return float(np.exp(2.0 * log_sigma_f) * (xi @ xj))


def kernel_se(xi, xj, log_ell: float, log_sigma_f: float) -> float:
    """Squared-exponential covariance with bandwidth exp(log_ell)."""
    xi, xj = _check_pair(xi, xj)
    d = xi - xj
    r2 = float(d @ d)
    if r2 == 0.0:
        return float(np.exp(2.0 * log_sigma_f))
    with np.errstate(over="ignore"):
        return float(
            np.exp(2.0 * log_sigma_f) * np.exp(-0.5 * r2 * np.exp(-2.0 * log_ell))
        )


def kernel_nn(xi, xj, log_ell: float, log_sigma_f: float) -> float:
    """Arcsine covariance of a one-hidden-layer network prior.

    Uses an isotropic weight-prior covariance l^-2 I over the augmented
    input (1, x), so each basis kernel carries one shared bandwidth.
    """
    xi, xj = _check_pair(xi, xj)
    inv_ell2 = np.exp(-2.0 * log_ell)
    u = 2.0 * inv_ell2 * (1.0 + float(xi @ xj))
    qi = 2.0 * inv_ell2 * (1.0 + float(xi @ xi))
    qj = 2.0 * inv_ell2 * (1.0 + float(xj @ xj))
    a = u / np.sqrt((1.0 + qi) * (1.0 + qj))
    return float(np.exp(2.0 * log_sigma_f) * np.arcsin(a))


def _check_spec_hp(spec: KernelSpec, hp: HyperParams) -> None:
    if hp.n_kernels != spec.n_kernels:
        raise ValueError(
            f"hyperparameters sized for {hp.n_kernels} kernels, layout has {spec.n_kernels}"
        )
    if spec.has_bandwidth and hp.log_ell is None:
        raise ValueError(f"kind {spec.kind!r} needs log_ell")
    if not spec.has_bandwidth and hp.log_ell is not None:
        raise ValueError("lin kernels carry no bandwidth")


def composite_kernel(xi, xj, spec: KernelSpec, hp: HyperParams) -> float:
    """Conic sum of per-bag basis kernels evaluated on one input pair."""
    xi, xj = _check_pair(xi, xj)
    if xi.size != spec.layout.n_features:
        raise ValueError(
            f"feature length {xi.size} does not match layout ({spec.layout.n_features})"
        )
    _check_spec_hp(spec, hp)
    total = 0.0
    for s, bag in enumerate(spec.layout.bags):
        a, b = xi[bag], xj[bag]
        if spec.kind == "lin":
            total += kernel_lin(a, b, hp.log_sigma_f[s])
        elif spec.kind == "se":
            total += kernel_se(a, b, hp.log_ell[s], hp.log_sigma_f[s])
        else:
            total += kernel_nn(a, b, hp.log_ell[s], hp.log_sigma_f[s])
    return total


def _mirror(m: np.ndarray) -> np.ndarray:
    """Force exact symmetry by mirroring the lower triangle."""
    lower = np.tril(m)
    return lower + np.tril(m, -1).T


class KernelCache:
    """Bag-wise sufficient statistics for repeated Gram evaluation.

    For fixed training inputs the per-bag inner products (lin, nn) or
    squared distances (se) do not depend on the hyperparameters, so they
    are computed once and reused across optimizer steps.  All stored
    matrices are exactly symmetric, which makes every derived Gram matrix
    exactly symmetric as well.
    """

    def __init__(self, X: np.ndarray, spec: KernelSpec):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("X must be a non-empty (N, D) matrix")
        if X.shape[1] != spec.layout.n_features:
            raise ValueError(
                f"X has {X.shape[1]} features, layout expects {spec.layout.n_features}"
            )
        if not np.isfinite(X).all():
            raise ValueError("X must be finite")
        self.spec = spec
        self.n = X.shape[0]
        self._stats: list[np.ndarray] = []
        for bag in spec.layout.bags:
            xs = X[:, bag]
            p = _mirror(xs @ xs.T)
            if spec.kind == "se":
                d = np.diag(p).copy()
                sq = d[:, None] + d[None, :] - 2.0 * p
                np.maximum(sq, 0.0, out=sq)
                np.fill_diagonal(sq, 0.0)
                self._stats.append(sq)
            else:
                self._stats.append(p)

    def bag_gram(self, hp: HyperParams, s: int) -> np.ndarray:
        """Gram contribution of bag ``s``."""
        sf2 = np.exp(2.0 * hp.log_sigma_f[s])
        stat = self._stats[s]
        if self.spec.kind == "lin":
            return sf2 * stat
        if self.spec.kind == "se":
            return sf2 * self._se_decay(hp, s)
        a, _, _ = self._nn_parts(hp, s)
        return sf2 * np.arcsin(a)

    def _se_decay(self, hp: HyperParams, s: int) -> np.ndarray:
        stat = self._stats[s]
        with np.errstate(over="ignore"):
            c = -0.5 * float(np.exp(-2.0 * hp.log_ell[s]))
        if not np.isfinite(c):
            # zero-bandwidth limit: 1 at zero distance, 0 elsewhere
            return (stat == 0.0).astype(float)
        return np.exp(c * stat)

    def _nn_parts(self, hp: HyperParams, s: int):
        inv_ell2 = np.exp(-2.0 * hp.log_ell[s])
        p = self._stats[s]
        q = 2.0 * inv_ell2 * (1.0 + np.diag(p))
        u = 2.0 * inv_ell2 * (1.0 + p)
        denom = np.sqrt(np.outer(1.0 + q, 1.0 + q))
        a = u / denom
        return a, q, inv_ell2

    def bag_gram_with_grads(self, hp: HyperParams, s: int):
        """Returns (K_s, dK_s/dlog_sigma_f_s, dK_s/dlog_ell_s or None)."""
        k = self.bag_gram(hp, s)
        dk_dsf = 2.0 * k
        if self.spec.kind == "lin":
            return k, dk_dsf, None
        if self.spec.kind == "se":
            with np.errstate(over="ignore"):
                inv_ell2 = float(np.exp(-2.0 * hp.log_ell[s]))
            if not np.isfinite(inv_ell2):
                # zero-bandwidth limit: the decay kills the slope everywhere
                return k, dk_dsf, np.zeros_like(k)
            return k, dk_dsf, k * (inv_ell2 * self._stats[s])
        sf2 = np.exp(2.0 * hp.log_sigma_f[s])
        a, q, _ = self._nn_parts(hp, s)
        frac = q / (1.0 + q)
        da = a * (frac[:, None] + frac[None, :] - 2.0)
        dk_dell = sf2 * da / np.sqrt(np.maximum(1.0 - a * a, 1e-30))
        return k, dk_dsf, dk_dell

    def gram(self, hp: HyperParams) -> np.ndarray:
        _check_spec_hp(self.spec, hp)
        total = self.bag_gram(hp, 0)
        for s in range(1, self.spec.n_kernels):
            total = total + self.bag_gram(hp, s)
        return total

    def gram_gradient(self, hp: HyperParams, param_index: int) -> np.ndarray:
        """Derivative of the Gram matrix w.r.t. one flat-vector entry.

        Noise and mean entries yield a zero matrix: the Gram matrix itself
        does not include the observation-noise term.
        """
        _check_spec_hp(self.spec, hp)
        n_kern = self.spec.n_kernels
        if not 0 <= param_index < hp.n_params:
            raise IndexError(f"param_index {param_index} out of range")
        if param_index < n_kern:
            _, dk, _ = self.bag_gram_with_grads(hp, param_index)
            return dk
        if self.spec.has_bandwidth and param_index < 2 * n_kern:
            _, _, dk = self.bag_gram_with_grads(hp, param_index - n_kern)
            return dk
        return np.zeros((self.n, self.n))


def gram(X: np.ndarray, spec: KernelSpec, hp: HyperParams) -> GramMatrix:
    """Dense composite Gram matrix over the rows of ``X``."""
    cache = KernelCache(X, spec)
    return GramMatrix(n=cache.n, values=cache.gram(hp))


def gram_gradient(
    X: np.ndarray, spec: KernelSpec, hp: HyperParams, param_index: int
) -> np.ndarray:
    """Derivative of the Gram matrix w.r.t. one hyperparameter entry."""
    return KernelCache(X, spec).gram_gradient(hp, param_index)


def cross_covariances(
    X: np.ndarray, x_star: np.ndarray, spec: KernelSpec, hp: HyperParams
) -> np.ndarray:
    """Covariances between each row of ``X`` and one test input."""
    X = np.asarray(X, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    if x_star.ndim != 1 or x_star.size != spec.layout.n_features:
        raise ValueError(
            f"x_star must have {spec.layout.n_features} features, got {x_star.shape}"
        )
    if X.shape[1] != x_star.size:
        raise ValueError("X and x_star dimension mismatch")
    _check_spec_hp(spec, hp)
    out = np.zeros(X.shape[0])
    for s, bag in enumerate(spec.layout.bags):
        xs = X[:, bag]
        zs = x_star[bag]
        sf2 = np.exp(2.0 * hp.log_sigma_f[s])
        if spec.kind == "lin":
            out += sf2 * (xs @ zs)
        elif spec.kind == "se":
            d = xs - zs[None, :]
            r2 = np.einsum("ij,ij->i", d, d)
            with np.errstate(over="ignore", invalid="ignore"):
                e = (-0.5 * np.exp(-2.0 * hp.log_ell[s])) * r2
                e[r2 == 0.0] = 0.0
                out += sf2 * np.exp(e)
        else:
            inv_ell2 = np.exp(-2.0 * hp.log_ell[s])
            u = 2.0 * inv_ell2 * (1.0 + xs @ zs)
            qi = 2.0 * inv_ell2 * (1.0 + np.einsum("ij,ij->i", xs, xs))
            qz = 2.0 * inv_ell2 * (1.0 + zs @ zs)
            out += sf2 * np.arcsin(u / np.sqrt((1.0 + qi) * (1.0 + qz)))
    return out
