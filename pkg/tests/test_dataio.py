import numpy as np
import pytest

from gpmkl.datagen import SyntheticConfig, generate_synthetic
from gpmkl.dataio import (
    DataFormatError,
    load_model,
    read_cv_report,
    read_dataset,
    read_volume,
    save_model,
    write_cv_report,
    write_dataset,
    write_volume,
)
from gpmkl.evaluation import cross_validate
from gpmkl.gp_classification import predict_proba
from gpmkl.gp_regression import predict_regression
from gpmkl.kernels import KernelSpec
from gpmkl.optimize import OptimizeOptions, train
from gpmkl.subspaces import VolumeDims, single_layout


def _small_dataset(seed=0, n_per_class=6):
    cfg = SyntheticConfig(
        dims=VolumeDims(3, 2, 2),
        n_per_class=n_per_class,
        n_classes=2,
        layout_kind="slices",
        informative_bags=(1,),
        effect_size=3.0,
        noise_std=1.0,
        seed=seed,
    )
    return generate_synthetic(cfg)


class TestVolumeFormat:
    def test_round_trip_is_byte_identical(self, tmp_path):
        dims = VolumeDims(3, 2, 2)
        rng = np.random.default_rng(0)
        voxels = rng.normal(size=dims.d).astype(np.float32)
        p1 = tmp_path / "a.gpv"
        p2 = tmp_path / "b.gpv"
        write_volume(p1, dims, voxels)
        back_dims, back = read_volume(p1)
        assert back_dims == dims
        write_volume(p2, dims, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_layout(self, tmp_path):
        dims = VolumeDims(2, 3, 4)
        path = tmp_path / "v.gpv"
        write_volume(path, dims, np.zeros(dims.d))
        raw = path.read_bytes()
        assert raw[:4] == b"GPMK"
        assert len(raw) == 16 + 4 * dims.d

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.gpv"
        path.write_bytes(b"JUNK" + b"\x00" * 20)
        with pytest.raises(DataFormatError):
            read_volume(path)

    def test_truncated_file_rejected(self, tmp_path):
        dims = VolumeDims(2, 2, 2)
        path = tmp_path / "t.gpv"
        write_volume(path, dims, np.zeros(8))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(DataFormatError):
            read_volume(path)


class TestDatasetFormat:
    def test_round_trip(self, tmp_path):
        ds = _small_dataset()
        write_dataset(tmp_path / "d", ds)
        loaded = read_dataset(tmp_path / "d")
        assert loaded.dims == ds.dims
        assert loaded.classes == (0, 1)
        assert loaded.layout_tag == "slices"
        assert loaded.ground_truth_bags == (1,)
        np.testing.assert_array_equal(loaded.labels, ds.labels)
        # voxel values survive the float32 quantization round trip
        np.testing.assert_allclose(loaded.X, ds.X.astype(np.float32), atol=0)

    def test_rewrite_is_byte_identical(self, tmp_path):
        ds = _small_dataset()
        write_dataset(tmp_path / "d1", ds)
        loaded = read_dataset(tmp_path / "d1")
        from gpmkl.datagen import Dataset

        again = Dataset(
            X=loaded.X,
            labels=loaded.labels,
            dims=loaded.dims,
            layout=loaded.layout(),
            informative_bags=loaded.ground_truth_bags,
        )
        write_dataset(tmp_path / "d2", again)
        for name in sorted(p.name for p in (tmp_path / "d1").iterdir()):
            assert (tmp_path / "d1" / name).read_bytes() == (
                tmp_path / "d2" / name
            ).read_bytes()

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataFormatError):
            read_dataset(tmp_path)

    def test_label_outside_classes_rejected(self, tmp_path):
        ds = _small_dataset()
        write_dataset(tmp_path / "d", ds)
        manifest = tmp_path / "d" / "manifest.txt"
        manifest.write_text(manifest.read_text().replace("vol_00000.gpv 0", "vol_00000.gpv 7"))
        with pytest.raises(DataFormatError):
            read_dataset(tmp_path / "d")

    def test_count_mismatch_rejected(self, tmp_path):
        ds = _small_dataset()
        write_dataset(tmp_path / "d", ds)
        manifest = tmp_path / "d" / "manifest.txt"
        manifest.write_text(manifest.read_text().replace("n: 12", "n: 13"))
        with pytest.raises(DataFormatError):
            read_dataset(tmp_path / "d")


class TestModelFormat:
    def test_classification_round_trip_bit_identical(self, tmp_path):
        ds = _small_dataset(seed=3)
        y = np.where(ds.labels == 1, 1.0, -1.0)
        spec = KernelSpec("se", ds.layout)
        model = train(
            ds.X, y, spec, task="binary-classification",
            opts=OptimizeOptions(max_iters=15),
        )
        path = tmp_path / "model.json"
        save_model(path, model, ds.dims)
        loaded = load_model(path)
        assert loaded.inference_used == model.inference_used
        rng = np.random.default_rng(1)
        for _ in range(5):
            z = rng.normal(size=ds.X.shape[1])
            a = predict_proba(model.posterior, z)
            b = predict_proba(loaded.posterior, z)
            assert a.probability == b.probability
            assert a.latent_mean == b.latent_mean
            assert a.latent_var == b.latent_var

    def test_regression_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(10, 4))
        y = x @ np.array([1.0, 0.0, -1.0, 0.5]) + 0.1 * rng.standard_normal(10)
        spec = KernelSpec("lin", single_layout(4))
        model = train(x, y, spec, task="regression", opts=OptimizeOptions(max_iters=20))
        path = tmp_path / "reg.json"
        save_model(path, model, None)
        loaded = load_model(path)
        for _ in range(5):
            z = rng.normal(size=4)
            a = predict_regression(model.posterior, z)
            b = predict_regression(loaded.posterior, z)
            assert a.mean == b.mean
            assert a.variance == b.variance

    def test_not_a_model_rejected(self, tmp_path):
        path = tmp_path / "nope.json"
        path.write_text("{\"format\": \"something-else\"}")
        with pytest.raises(DataFormatError):
            load_model(path)


class TestCvReportFormat:
    def _report(self):
        ds = _small_dataset(seed=5, n_per_class=8)
        y = np.where(ds.labels == 1, 1.0, -1.0)
        spec = KernelSpec("lin", ds.layout)
        return cross_validate(
            ds.X, y, spec, opts=OptimizeOptions(max_iters=15), k=4, seed=0
        )

    def test_write_and_read_back(self, tmp_path):
        report = self._report()
        path = tmp_path / "cv.txt"
        write_cv_report(path, report)
        doc = read_cv_report(path)
        assert doc["report"] == "gpmkl-cv"
        assert int(doc["folds"]) == 4
        rows = doc["weight_rows"]
        assert rows.shape == report.weights.shape
        # six significant digits survive the text round trip
        np.testing.assert_allclose(rows, report.weights, rtol=1e-5)

    def test_key_value_lines(self, tmp_path):
        report = self._report()
        path = tmp_path / "cv.txt"
        write_cv_report(path, report)
        for line in path.read_text().splitlines():
            assert ":" in line
        text = path.read_text()
        assert "mean_accuracy:" in text
        assert "std_auc:" in text
        assert "fold_3_weights:" in text

    def test_bad_report_rejected(self, tmp_path):
        path = tmp_path / "junk.txt"
        path.write_text("report: other\n")
        with pytest.raises(DataFormatError):
            read_cv_report(path)
