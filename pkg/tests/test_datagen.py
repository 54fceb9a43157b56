import numpy as np
import pytest

from gpmkl.datagen import SyntheticConfig, generate_synthetic
from gpmkl.subspaces import VolumeDims


def _cfg(**overrides):
    base = dict(
        dims=VolumeDims(4, 4, 4),
        n_per_class=20,
        n_classes=2,
        layout_kind="cube",
        cube_edge=2,
        informative_bags=(3,),
        effect_size=2.0,
        noise_std=1.0,
        seed=5,
    )
    base.update(overrides)
    return SyntheticConfig(**base)


class TestGenerateSynthetic:
    def test_deterministic_per_seed(self):
        a = generate_synthetic(_cfg())
        b = generate_synthetic(_cfg())
        assert np.array_equal(a.X, b.X)
        assert np.array_equal(a.labels, b.labels)

    def test_different_seed_differs(self):
        a = generate_synthetic(_cfg())
        b = generate_synthetic(_cfg(seed=6))
        assert not np.array_equal(a.X, b.X)

    def test_balanced_classes(self):
        ds = generate_synthetic(_cfg(n_per_class=17))
        counts = np.bincount(ds.labels)
        np.testing.assert_array_equal(counts, [17, 17])

    def test_class_shifts_in_informative_bag(self):
        ds = generate_synthetic(_cfg(n_per_class=150, effect_size=2.0))
        bag = ds.layout.bags[3]
        mean0 = ds.X[ds.labels == 0][:, bag].mean()
        mean1 = ds.X[ds.labels == 1][:, bag].mean()
        # binary classes shift by 0 and effect_size
        assert mean0 == pytest.approx(0.0, abs=0.1)
        assert mean1 == pytest.approx(2.0, abs=0.1)

    def test_three_class_shift_spacing(self):
        ds = generate_synthetic(
            _cfg(n_classes=3, n_per_class=120, effect_size=3.0)
        )
        bag = ds.layout.bags[3]
        means = [ds.X[ds.labels == c][:, bag].mean() for c in range(3)]
        np.testing.assert_allclose(means, [0.0, 1.5, 3.0], atol=0.15)

    def test_background_moments(self):
        ds = generate_synthetic(_cfg(n_per_class=100, noise_std=0.7))
        quiet = np.concatenate(
            [ds.layout.bags[s] for s in range(ds.layout.n_bags) if s != 3]
        )
        vals = ds.X[:, quiet].ravel()
        se_mean = 0.7 / np.sqrt(vals.size)
        assert abs(vals.mean()) < 3 * se_mean
        se_std = 0.7 / np.sqrt(2 * (vals.size - 1))
        assert abs(vals.std(ddof=1) - 0.7) < 3 * se_std

    def test_ground_truth_recorded(self):
        ds = generate_synthetic(_cfg(informative_bags=(1, 4)))
        assert ds.informative_bags == (1, 4)

    def test_invalid_bag_rejected(self):
        with pytest.raises(ValueError):
            generate_synthetic(_cfg(informative_bags=(99,)))

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            _cfg(n_classes=5)
        with pytest.raises(ValueError):
            _cfg(noise_std=0.0)
        with pytest.raises(ValueError):
            _cfg(effect_size=-1.0)

    def test_null_effect_gives_chance_accuracy(self):
        from gpmkl.evaluation import confusion_counts, confusion_metrics
        from gpmkl.gp_classification import predict_proba
        from gpmkl.kernels import KernelSpec
        from gpmkl.optimize import OptimizeOptions, train
        from gpmkl.subspaces import single_layout

        ds = generate_synthetic(
            _cfg(dims=VolumeDims(3, 3, 3), layout_kind="single", cube_edge=None,
                 informative_bags=(), effect_size=0.0, n_per_class=100, seed=21)
        )
        y = np.where(ds.labels == 1, 1.0, -1.0)
        train_idx = np.arange(0, 200, 2)
        test_idx = np.arange(1, 200, 2)
        spec = KernelSpec("lin", single_layout(ds.X.shape[1]))
        model = train(
            ds.X[train_idx], y[train_idx], spec,
            task="binary-classification", opts=OptimizeOptions(max_iters=30),
        )
        probs = np.array(
            [predict_proba(model.posterior, x).probability for x in ds.X[test_idx]]
        )
        preds = np.where(probs >= 0.5, 1.0, -1.0)
        acc, _, _ = confusion_metrics(confusion_counts(y[test_idx], preds))
        assert abs(acc - 0.5) <= 0.15
