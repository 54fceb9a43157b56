import math

import numpy as np
import pytest

from gpmkl.gp_regression import (
    fit_exact,
    log_marginal_likelihood,
    predict_regression,
)
from gpmkl.kernels import HyperParams, KernelCache, KernelSpec, composite_kernel
from gpmkl.subspaces import VolumeDims, single_layout, slice_layout

from helpers import fd_gradient, rel_err

LOG_2PI = math.log(2.0 * math.pi)


def _unit_kernel_problem():
    """One observation with k(x, x) = 1, noise variance 0.1, mean 0."""
    spec = KernelSpec("se", single_layout(3))
    hp = HyperParams(
        log_sigma_f=np.array([0.0]),
        log_ell=np.array([0.0]),
        log_sigma_n=0.5 * math.log(0.1),
        mean_const=0.0,
    )
    x = np.zeros((1, 3))
    y = np.ones(1)
    return x, y, spec, hp


def _random_problem(rng, n=20, kind="se", n_bags=2):
    dims = VolumeDims(3, 1, n_bags)
    spec = KernelSpec(kind, slice_layout(dims))
    hp = HyperParams(
        log_sigma_f=rng.uniform(-0.4, 0.4, n_bags),
        log_ell=rng.uniform(-0.2, 0.6, n_bags) if kind != "lin" else None,
        log_sigma_n=rng.uniform(-2.0, -0.5),
        mean_const=rng.normal(),
    )
    x = rng.normal(size=(n, dims.d))
    y = rng.normal(size=n)
    return x, y, spec, hp


class TestFitExact:
    def test_scalar_solve(self):
        x, y, spec, hp = _unit_kernel_problem()
        post = fit_exact(x, y, spec, hp)
        assert post.alpha[0] == pytest.approx(1.0 / 1.1, rel=1e-12)

    def test_zero_residual(self):
        rng = np.random.default_rng(0)
        x, y, spec, hp = _random_problem(rng)
        y = np.full(y.shape, hp.mean_const)
        post = fit_exact(x, y, spec, hp)
        np.testing.assert_allclose(post.alpha, 0.0, atol=1e-14)

    def test_factorization_reconstructs(self):
        rng = np.random.default_rng(1)
        x, y, spec, hp = _random_problem(rng, n=20)
        post = fit_exact(x, y, spec, hp)
        kn = KernelCache(x, spec).gram(hp) + np.exp(2.0 * hp.log_sigma_n) * np.eye(20)
        recon = post.chol_L @ post.chol_L.T
        assert np.linalg.norm(recon - kn) / np.linalg.norm(kn) < 1e-8
        np.testing.assert_allclose(kn @ post.alpha, y - hp.mean_const, atol=1e-8)

    def test_noise_scale_required(self):
        spec = KernelSpec("lin", single_layout(2))
        hp = HyperParams(log_sigma_f=np.array([0.0]))
        with pytest.raises(ValueError):
            fit_exact(np.ones((2, 2)), np.ones(2), spec, hp)


class TestLogMarginalLikelihood:
    def test_scalar_value(self):
        x, y, spec, hp = _unit_kernel_problem()
        value, _ = log_marginal_likelihood(x, y, spec, hp)
        expected = -0.5 / 1.1 - 0.5 * math.log(1.1) - 0.5 * LOG_2PI
        assert value == pytest.approx(expected, rel=1e-12)

    def test_zero_residual_drops_data_fit(self):
        rng = np.random.default_rng(2)
        x, y, spec, hp = _random_problem(rng, n=8)
        y = np.full(y.shape, hp.mean_const)
        value, _ = log_marginal_likelihood(x, y, spec, hp)
        kn = KernelCache(x, spec).gram(hp) + np.exp(2.0 * hp.log_sigma_n) * np.eye(8)
        sign, logdet = np.linalg.slogdet(kn)
        assert sign > 0
        assert value == pytest.approx(-0.5 * logdet - 4.0 * LOG_2PI, rel=1e-10)

    @pytest.mark.parametrize("kind,n_bags", [("se", 4), ("lin", 3), ("nn", 2)])
    def test_gradient_matches_finite_differences(self, kind, n_bags):
        rng = np.random.default_rng(3)
        x, y, spec, hp = _random_problem(rng, n=15, kind=kind, n_bags=n_bags)
        _, grad = log_marginal_likelihood(x, y, spec, hp)
        fd = fd_gradient(
            lambda v: log_marginal_likelihood(x, y, spec, hp.with_vector(v))[0],
            hp.to_vector(),
        )
        assert rel_err(grad, fd) < 1e-5


class TestPredictRegression:
    def test_scalar_conditioning(self):
        x, y, spec, hp = _unit_kernel_problem()
        post = fit_exact(x, y, spec, hp)
        pred = predict_regression(post, x[0])
        assert pred.mean == pytest.approx(1.0 / 1.1, rel=1e-12)
        assert pred.variance == pytest.approx(1.0 - 1.0 / 1.1, rel=1e-10)

    def test_prior_recovery_far_from_data(self):
        spec = KernelSpec("se", single_layout(3))
        hp = HyperParams(
            log_sigma_f=np.array([0.3]),
            log_ell=np.array([-2.0]),
            log_sigma_n=math.log(0.1),
            mean_const=0.7,
        )
        x = np.zeros((4, 3))
        y = np.array([1.0, 1.2, 0.8, 1.1])
        post = fit_exact(x, y, spec, hp)
        far = np.full(3, 50.0)
        pred = predict_regression(post, far)
        assert pred.mean == pytest.approx(0.7, abs=1e-8)
        assert pred.variance == pytest.approx(math.exp(0.6), rel=1e-8)

    @pytest.mark.parametrize("kind", ["lin", "se", "nn"])
    def test_brute_force_conditioning_oracle(self, kind):
        rng = np.random.default_rng(4)
        for n in (2, 5, 8):
            x, y, spec, hp = _random_problem(rng, n=n, kind=kind)
            post = fit_exact(x, y, spec, hp)
            z = rng.normal(size=x.shape[1])
            pred = predict_regression(post, z)
            # dense joint-Gaussian conditioning, scalar kernel evaluations
            sn2 = math.exp(2.0 * hp.log_sigma_n)
            kmat = np.array(
                [[composite_kernel(a, b, spec, hp) for b in x] for a in x]
            ) + sn2 * np.eye(n)
            kvec = np.array([composite_kernel(a, z, spec, hp) for a in x])
            kzz = composite_kernel(z, z, spec, hp)
            sol = np.linalg.solve(kmat, y - hp.mean_const)
            mean = hp.mean_const + kvec @ sol
            var = kzz - kvec @ np.linalg.solve(kmat, kvec)
            assert abs(pred.mean - mean) <= 1e-10 * max(1.0, abs(mean))
            assert abs(pred.variance - var) <= 1e-10 * max(1.0, abs(var))

    def test_variance_bounded_by_prior(self):
        rng = np.random.default_rng(5)
        x, y, spec, hp = _random_problem(rng, n=12)
        post = fit_exact(x, y, spec, hp)
        for _ in range(20):
            z = rng.normal(size=x.shape[1])
            pred = predict_regression(post, z)
            prior = composite_kernel(z, z, spec, hp)
            assert 0.0 <= pred.variance <= prior + 1e-12

    def test_information_gain_is_monotone(self):
        rng = np.random.default_rng(6)
        for trial in range(5):
            x, y, spec, hp = _random_problem(rng, n=10, kind="se")
            z = rng.normal(size=x.shape[1])
            small = fit_exact(x[:6], y[:6], spec, hp)
            big = fit_exact(x, y, spec, hp)
            var_small = predict_regression(small, z).variance
            var_big = predict_regression(big, z).variance
            assert var_big <= var_small + 1e-8
