import numpy as np
import pytest

from gpmkl.gp_classification import predict_proba
from gpmkl.gp_regression import log_marginal_likelihood
from gpmkl.kernels import HyperParams, KernelCache, KernelSpec
from gpmkl.optimize import (
    OptimizeOptions,
    default_hyperparams,
    minimize,
    train,
)
from gpmkl.subspaces import VolumeDims, single_layout, slice_layout


def rosenbrock(x):
    a, b = x
    f = (1.0 - a) ** 2 + 100.0 * (b - a * a) ** 2
    g = np.array([-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)])
    return f, g


class TestMinimize:
    def test_convex_quadratic(self):
        res = minimize(lambda x: (float(x @ x), 2.0 * x), np.array([3.0, 4.0]))
        assert res.fun < 1e-10
        np.testing.assert_allclose(res.x, 0.0, atol=1e-5)

    def test_rosenbrock(self):
        res = minimize(
            rosenbrock, np.array([-1.2, 1.0]), OptimizeOptions(max_iters=100)
        )
        assert res.fun < 1e-8
        assert res.iterations <= 100
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-3)

    def test_never_worse_than_start(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            a = rng.normal(size=(4, 4))
            h = a @ a.T + 0.1 * np.eye(4)
            b = rng.normal(size=4)

            def fg(x):
                return float(0.5 * x @ h @ x + b @ x), h @ x + b

            x0 = rng.normal(size=4) * 3.0
            res = minimize(fg, x0, OptimizeOptions(max_iters=5))
            assert res.fun <= fg(x0)[0]

    def test_nan_at_start_rejected(self):
        def fg(x):
            return float("nan"), np.zeros_like(x)

        with pytest.raises(ValueError):
            minimize(fg, np.zeros(2))

    def test_deterministic(self):
        res1 = minimize(rosenbrock, np.array([-1.2, 1.0]))
        res2 = minimize(rosenbrock, np.array([-1.2, 1.0]))
        assert np.array_equal(res1.x, res2.x)
        assert res1.fun == res2.fun

    def test_seeded_restarts(self):
        # a double well: restarts can only improve the incumbent
        def fg(x):
            v = x[0]
            return (v * v - 1.0) ** 2 + 0.2 * v, np.array(
                [4.0 * v * (v * v - 1.0) + 0.2]
            )

        base = minimize(fg, np.array([2.0]))
        multi = minimize(fg, np.array([2.0]), OptimizeOptions(seed=1, n_restarts=4))
        assert multi.fun <= base.fun

    def test_invalid_options(self):
        with pytest.raises(ValueError):
            OptimizeOptions(max_iters=0)
        with pytest.raises(ValueError):
            OptimizeOptions(wolfe_c1=0.5, wolfe_c2=0.1)


class TestTrainRegression:
    def test_recovers_at_least_generating_evidence(self):
        rng = np.random.default_rng(101)
        spec = KernelSpec("se", single_layout(2))
        true_hp = HyperParams(
            log_sigma_f=np.array([0.3]),
            log_ell=np.array([0.0]),
            log_sigma_n=np.log(0.2),
            mean_const=1.0,
        )
        x = rng.uniform(-3.0, 3.0, size=(30, 2))
        kmat = KernelCache(x, spec).gram(true_hp) + np.exp(
            2.0 * true_hp.log_sigma_n
        ) * np.eye(30)
        y = true_hp.mean_const + np.linalg.cholesky(kmat) @ rng.standard_normal(30)
        model = train(x, y, spec, task="regression")
        lml_true, _ = log_marginal_likelihood(x, y, spec, true_hp)
        assert model.lml >= lml_true - 1e-6
        assert model.inference_used == "exact"

    def test_posterior_refit_at_optimum(self):
        rng = np.random.default_rng(1)
        spec = KernelSpec("lin", single_layout(3))
        x = rng.normal(size=(15, 3))
        y = x @ np.array([1.0, -0.5, 0.2]) + 0.1 * rng.standard_normal(15)
        model = train(x, y, spec, task="regression")
        value, _ = log_marginal_likelihood(x, y, spec, model.hp)
        assert model.lml == pytest.approx(value, rel=1e-12)


class TestTrainClassification:
    def test_separable_toy_fits_training_set(self):
        rng = np.random.default_rng(3)
        n = 20
        x = np.vstack(
            [rng.normal([2, 2], 0.5, (n // 2, 2)), rng.normal([-2, -2], 0.5, (n // 2, 2))]
        )
        y = np.concatenate([np.ones(n // 2), -np.ones(n // 2)])
        spec = KernelSpec("lin", single_layout(2))
        model = train(x, y, spec, task="binary-classification")
        probs = np.array([predict_proba(model.posterior, xi).probability for xi in x])
        preds = np.where(probs >= 0.5, 1.0, -1.0)
        assert np.all(preds == y)

    def test_informative_bag_dominates(self):
        from gpmkl.datagen import SyntheticConfig, generate_synthetic

        cfg = SyntheticConfig(
            dims=VolumeDims(5, 5, 5),
            n_per_class=30,
            n_classes=2,
            layout_kind="slices",
            informative_bags=(2,),
            effect_size=3.0,
            noise_std=1.0,
            seed=11,
        )
        ds = generate_synthetic(cfg)
        spec = KernelSpec("se", ds.layout)
        y = np.where(ds.labels == 1, 1.0, -1.0)
        model = train(ds.X, y, spec, task="binary-classification")
        weights = np.exp(2.0 * model.hp.log_sigma_f)
        assert np.argmax(weights) == 2
        assert weights[2] > np.max(np.delete(weights, 2))

    def test_determinism(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(14, 3))
        y = np.where(x[:, 0] > 0, 1.0, -1.0)
        spec = KernelSpec("lin", single_layout(3))
        m1 = train(x, y, spec, task="binary-classification")
        m2 = train(x, y, spec, task="binary-classification")
        assert np.array_equal(m1.hp.to_vector(), m2.hp.to_vector())
        assert m1.lml == m2.lml

    def test_explicit_laplace_request(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(10, 2))
        y = np.where(x[:, 0] + x[:, 1] > 0, 1.0, -1.0)
        spec = KernelSpec("lin", single_layout(2))
        model = train(x, y, spec, task="binary-classification", inference="la")
        assert model.inference_used == "LA"
        assert not model.fallback_triggered

    def test_ep_failure_falls_back_to_laplace(self):
        # identical inputs, alternating labels, enormous amplitude: EP cannot
        # converge, the whole run restarts with Laplace
        spec = KernelSpec("lin", single_layout(1))
        x = np.ones((32, 1))
        y = np.array([1.0, -1.0] * 16)
        init = HyperParams(log_sigma_f=np.array([300.0]))
        model = train(x, y, spec, init_hp=init, task="binary-classification")
        assert model.fallback_triggered
        assert model.inference_used == "LA"
        assert np.isfinite(model.lml)

    def test_fallback_discipline(self):
        # non-separable data keeps the optimizer in EP-friendly territory
        rng = np.random.default_rng(7)
        x = rng.normal(size=(16, 2))
        margin = x[:, 0] + 0.8 * rng.standard_normal(16)
        y = np.where(margin > 0, 1.0, -1.0)
        spec = KernelSpec("lin", single_layout(2))
        model = train(x, y, spec, task="binary-classification")
        assert model.inference_used == "EP"
        assert not model.fallback_triggered

    def test_unknown_task_rejected(self):
        spec = KernelSpec("lin", single_layout(2))
        with pytest.raises(ValueError):
            train(np.ones((4, 2)), np.ones(4), spec, task="ranking")


class TestDefaultHyperparams:
    def test_median_bandwidth_per_bag(self):
        rng = np.random.default_rng(8)
        dims = VolumeDims(3, 1, 2)
        spec = KernelSpec("se", slice_layout(dims))
        x = rng.normal(size=(12, dims.d))
        hp = default_hyperparams(x, np.ones(12), spec, "binary-classification")
        for s, bag in enumerate(spec.layout.bags):
            d2 = []
            for i in range(12):
                for j in range(i + 1, 12):
                    diff = x[i, bag] - x[j, bag]
                    d2.append(float(diff @ diff))
            expected = np.log(np.sqrt(np.median(d2)))
            assert hp.log_ell[s] == pytest.approx(expected, rel=1e-10)

    def test_classification_has_no_noise(self):
        spec = KernelSpec("lin", single_layout(3))
        hp = default_hyperparams(np.ones((5, 3)), np.ones(5), spec, "binary-classification")
        assert hp.log_sigma_n is None
        assert hp.mean_const == 0.0
