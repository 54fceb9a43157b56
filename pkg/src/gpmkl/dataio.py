"""On-disk formats: volume files, dataset manifests, models, CV reports.

Volume files are binary: a 16-byte header (magic ``GPMK`` plus little-endian
u32 axis sizes) followed by ``nx*ny*nz`` little-endian float32 voxels in
x-fastest order.  Manifests and CV reports are line-oriented ``key: value``
text.  Models are JSON carrying full-precision hyperparameters plus the
posterior quantities and training data a full (non-sparse) GP needs to
predict; a saved model reloads to bit-identical predictions.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import CVReport
from .gp_classification import LatentPosterior
from .gp_regression import RegressionPosterior
from .kernels import HyperParams, KernelSpec
from .optimize import TrainedModel
from .subspaces import SubspaceLayout, VolumeDims
from .datagen import Dataset, build_layout

__all__ = [
    "DataFormatError",
    "VOLUME_MAGIC",
    "write_volume",
    "read_volume",
    "write_dataset",
    "read_dataset",
    "LoadedDataset",
    "save_model",
    "load_model",
    "write_cv_report",
    "read_cv_report",
    "parse_layout_tag",
]

VOLUME_MAGIC = b"GPMK"
MODEL_FORMAT = "gpmkl-model"
MODEL_VERSION = 1
MANIFEST_NAME = "manifest.txt"


class DataFormatError(ValueError):
    """A file on disk does not match the expected format."""


def write_volume(path: Path | str, dims: VolumeDims, voxels: np.ndarray) -> None:
    voxels = np.asarray(voxels, dtype="<f4").ravel()
    if voxels.size != dims.d:
        raise DataFormatError(
            f"volume has {voxels.size} voxels, dims require {dims.d}"
        )
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write(struct.pack("<III", dims.nx, dims.ny, dims.nz))
        fh.write(voxels.tobytes())


def read_volume(path: Path | str) -> tuple[VolumeDims, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != VOLUME_MAGIC:
        raise DataFormatError(f"{path}: not a volume file (bad magic)")
    nx, ny, nz = struct.unpack("<III", raw[4:16])
    dims = VolumeDims(int(nx), int(ny), int(nz))
    expected = 16 + 4 * dims.d
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: size {len(raw)} does not match header ({expected} bytes)"
        )
    voxels = np.frombuffer(raw, dtype="<f4", offset=16).astype(float)
    return dims, voxels


def parse_layout_tag(tag: str) -> tuple[str, int | None]:
    """Split a layout tag like ``cube:8`` into (kind, edge)."""
    if tag == "single" or tag == "slices":
        return tag, None
    if tag.startswith("cube:"):
        try:
            edge = int(tag.split(":", 1)[1])
        except ValueError:
            raise DataFormatError(f"bad cube edge in layout tag {tag!r}")
        if edge < 1:
            raise DataFormatError(f"cube edge must be positive in {tag!r}")
        return "cube", edge
    raise DataFormatError(f"unknown layout tag {tag!r}")


@dataclass(frozen=True)
class LoadedDataset:
    """A dataset read back from disk (voxels are float32-quantized)."""

    X: np.ndarray
    labels: np.ndarray
    dims: VolumeDims
    classes: tuple[int, ...]
    layout_tag: str
    ground_truth_bags: tuple[int, ...]

    def layout(self) -> SubspaceLayout:
        kind, edge = parse_layout_tag(self.layout_tag)
        return build_layout(self.dims, kind, edge)


def write_dataset(directory: Path | str, dataset: Dataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [
        f"dims: {dataset.dims.nx} {dataset.dims.ny} {dataset.dims.nz}",
        f"n: {dataset.X.shape[0]}",
        "classes: " + " ".join(str(c) for c in dataset.classes),
        f"layout: {dataset.layout.kind_tag}",
    ]
    if dataset.informative_bags:
        lines.append(
            "ground_truth_bags: " + " ".join(str(b) for b in dataset.informative_bags)
        )
    lines.append("volumes:")
    for i, (row, label) in enumerate(zip(dataset.X, dataset.labels)):
        name = f"vol_{i:05d}.gpv"
        write_volume(directory / name, dataset.dims, row)
        lines.append(f"{name} {int(label)}")
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n")


def read_dataset(directory: Path | str) -> LoadedDataset:
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.is_file():
        raise DataFormatError(f"{directory}: no {MANIFEST_NAME}")
    keys: dict[str, str] = {}
    files: list[tuple[str, int]] = []
    in_volumes = False
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if in_volumes:
            parts = line.split()
            if len(parts) != 2:
                raise DataFormatError(f"{manifest}:{lineno}: bad volume line {line!r}")
            try:
                files.append((parts[0], int(parts[1])))
            except ValueError:
                raise DataFormatError(f"{manifest}:{lineno}: bad label in {line!r}")
        elif line == "volumes:":
            in_volumes = True
        else:
            if ":" not in line:
                raise DataFormatError(f"{manifest}:{lineno}: expected key: value")
            key, value = line.split(":", 1)
            keys[key.strip()] = value.strip()
    for required in ("dims", "n", "classes", "layout"):
        if required not in keys:
            raise DataFormatError(f"{manifest}: missing key {required!r}")
    try:
        nx, ny, nz = (int(v) for v in keys["dims"].split())
        dims = VolumeDims(nx, ny, nz)
        n = int(keys["n"])
        classes = tuple(int(c) for c in keys["classes"].split())
    except ValueError as exc:
        raise DataFormatError(f"{manifest}: {exc}")
    parse_layout_tag(keys["layout"])  # validate
    truth: tuple[int, ...] = ()
    if "ground_truth_bags" in keys:
        truth = tuple(int(b) for b in keys["ground_truth_bags"].split())
    if len(files) != n:
        raise DataFormatError(f"{manifest}: lists {len(files)} volumes, n is {n}")
    x = np.empty((n, dims.d))
    labels = np.empty(n, dtype=int)
    for i, (name, label) in enumerate(files):
        vdims, voxels = read_volume(directory / name)
        if vdims != dims:
            raise DataFormatError(f"{name}: dims {vdims} disagree with manifest")
        if label not in classes:
            raise DataFormatError(f"{name}: label {label} not in declared classes")
        x[i] = voxels
        labels[i] = label
    return LoadedDataset(
        X=x,
        labels=labels,
        dims=dims,
        classes=classes,
        layout_tag=keys["layout"],
        ground_truth_bags=truth,
    )


def _layout_payload(spec: KernelSpec, dims: VolumeDims | None) -> dict:
    kind, _ = parse_layout_tag(spec.layout.kind_tag)
    payload = {"tag": spec.layout.kind_tag, "n_features": spec.layout.n_features}
    if dims is not None:
        payload["dims"] = [dims.nx, dims.ny, dims.nz]
    elif kind != "single":
        raise DataFormatError(f"layout {spec.layout.kind_tag!r} needs volume dims")
    return payload


def _rebuild_layout(payload: dict) -> SubspaceLayout:
    kind, edge = parse_layout_tag(payload["tag"])
    if kind == "single":
        return build_layout(VolumeDims(payload["n_features"], 1, 1), "single")
    dims = VolumeDims(*payload["dims"])
    return build_layout(dims, kind, edge)


def save_model(path: Path | str, model: TrainedModel, dims: VolumeDims | None) -> None:
    hp = model.hp
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "task": model.task,
        "kernel": model.spec.kind,
        "layout": _layout_payload(model.spec, dims),
        "inference": model.inference_used,
        "fallback_triggered": model.fallback_triggered,
        "lml": model.lml,
        "hyperparams": {
            "log_sigma_f": hp.log_sigma_f.tolist(),
            "log_ell": None if hp.log_ell is None else hp.log_ell.tolist(),
            "log_sigma_n": hp.log_sigma_n,
            "mean_const": hp.mean_const,
        },
    }
    post = model.posterior
    doc["train_x"] = post.X.tolist()
    if isinstance(post, RegressionPosterior):
        doc["posterior"] = {
            "chol_L": post.chol_L.tolist(),
            "alpha": post.alpha.tolist(),
            "jitter": post.jitter,
        }
    else:
        doc["posterior"] = {
            "method": post.method,
            "f_hat": post.f_hat.tolist(),
            "pred_alpha": post.pred_alpha.tolist(),
            "sqrt_w": post.sqrt_w.tolist(),
            "chol_B": post.chol_B.tolist(),
            "approx_lml": post.approx_lml,
        }
    Path(path).write_text(json.dumps(doc))


def load_model(path: Path | str) -> TrainedModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: cannot parse model file: {exc}")
    if doc.get("format") != MODEL_FORMAT:
        raise DataFormatError(f"{path}: not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise DataFormatError(f"{path}: unsupported version {doc.get('version')}")
    layout = _rebuild_layout(doc["layout"])
    spec = KernelSpec(doc["kernel"], layout)
    hp_doc = doc["hyperparams"]
    hp = HyperParams(
        log_sigma_f=np.array(hp_doc["log_sigma_f"]),
        log_ell=None if hp_doc["log_ell"] is None else np.array(hp_doc["log_ell"]),
        log_sigma_n=hp_doc["log_sigma_n"],
        mean_const=hp_doc["mean_const"],
    )
    x = np.array(doc["train_x"])
    pdoc = doc["posterior"]
    if doc["task"] == "regression":
        posterior = RegressionPosterior(
            X=x,
            spec=spec,
            hp=hp,
            chol_L=np.array(pdoc["chol_L"]),
            alpha=np.array(pdoc["alpha"]),
            jitter=pdoc["jitter"],
        )
    else:
        posterior = LatentPosterior(
            method=pdoc["method"],
            f_hat=np.array(pdoc["f_hat"]),
            pred_alpha=np.array(pdoc["pred_alpha"]),
            sqrt_w=np.array(pdoc["sqrt_w"]),
            chol_B=np.array(pdoc["chol_B"]),
            approx_lml=pdoc["approx_lml"],
            X=x,
            spec=spec,
            hp=hp,
        )
    return TrainedModel(
        task=doc["task"],
        spec=spec,
        hp=hp,
        posterior=posterior,
        lml=doc["lml"],
        inference_used=doc["inference"],
        fallback_triggered=doc["fallback_triggered"],
    )


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def write_cv_report(path: Path | str, report: CVReport) -> None:
    lines = [
        "report: gpmkl-cv",
        f"folds: {report.n_folds}",
        f"seed: {report.seed}",
        f"kernel: {report.kernel_kind}",
        f"layout: {report.layout_tag}",
        f"n_bags: {report.weights.shape[1]}",
        f"fallbacks: {report.fallback_count}",
    ]
    for fold in range(report.n_folds):
        if fold in report.errors:
            lines.append(f"fold_{fold}_error: {report.errors[fold]}")
            continue
        for name in ("accuracy", "sensitivity", "specificity", "auc"):
            lines.append(f"fold_{fold}_{name}: {_fmt(report.metric(name)[fold])}")
        lines.append(
            f"fold_{fold}_weights: "
            + " ".join(_fmt(w) for w in report.weights[fold])
        )
    for name in ("accuracy", "sensitivity", "specificity", "auc"):
        lines.append(f"mean_{name}: {_fmt(report.mean(name))}")
        lines.append(f"std_{name}: {_fmt(report.std(name))}")
    if report.pooled_auc is not None:
        lines.append(f"pooled_auc: {_fmt(report.pooled_auc)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_cv_report(path: Path | str) -> dict:
    """Parse a CV report back into a dict with per-fold weight rows."""
    path = Path(path)
    keys: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if ":" not in line:
            raise DataFormatError(f"{path}:{lineno}: expected key: value")
        key, value = line.split(":", 1)
        keys[key.strip()] = value.strip()
    if keys.get("report") != "gpmkl-cv":
        raise DataFormatError(f"{path}: not a CV report")
    try:
        n_folds = int(keys["folds"])
        n_bags = int(keys["n_bags"])
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}: bad header: {exc}")
    weights = []
    for fold in range(n_folds):
        key = f"fold_{fold}_weights"
        if key in keys:
            row = np.array([float(v) for v in keys[key].split()])
            if row.size != n_bags:
                raise DataFormatError(f"{path}: fold {fold} has {row.size} weights")
            weights.append(row)
    out = dict(keys)
    out["weight_rows"] = np.array(weights) if weights else np.empty((0, n_bags))
    return out
