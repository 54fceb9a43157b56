"""Command-line front end: generate, train, cv, predict, relevance.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure (no inference route converged).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .datagen import SyntheticConfig, generate_synthetic
from .dataio import (
    DataFormatError,
    load_model,
    read_cv_report,
    read_dataset,
    read_volume,
    save_model,
    write_cv_report,
    write_dataset,
)
from .evaluation import cross_validate
from .gp_classification import ConvergenceFailure, predict_proba
from .gp_regression import predict_regression
from .kernels import KernelSpec
from .linalg import FactorizationError
from .optimize import OptimizeOptions, train
from .subspaces import VolumeDims, relevance_scores
from .datagen import build_layout

__all__ = ["run", "main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


def _parse_dims(text: str) -> VolumeDims:
    parts = text.split(",")
    if len(parts) != 3:
        raise _UsageError(f"--dims expects NX,NY,NZ, got {text!r}")
    try:
        nx, ny, nz = (int(p) for p in parts)
        return VolumeDims(nx, ny, nz)
    except ValueError as exc:
        raise _UsageError(f"bad --dims {text!r}: {exc}")


def _parse_layout_arg(text: str, allow_single: bool) -> tuple[str, int | None]:
    if text == "slices":
        return "slices", None
    if text == "single" and allow_single:
        return "single", None
    if text.startswith("cube:"):
        try:
            edge = int(text.split(":", 1)[1])
        except ValueError:
            raise _UsageError(f"bad cube edge in {text!r}")
        if edge < 1:
            raise _UsageError("cube edge must be positive")
        return "cube", edge
    raise _UsageError(f"unknown layout {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    if not text:
        return ()
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise _UsageError(f"expected comma-separated integers, got {text!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpmkl",
        description="GP classifiers over volumetric data with subspace kernel sums",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--dims", required=True, help="NX,NY,NZ voxel counts")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--n", type=int, required=True, help="instances per class")
    p.add_argument("--layout", required=True, help="slices | cube:E")
    p.add_argument("--informative", default="", help="comma-separated bag indices")
    p.add_argument("--effect", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--kernel", required=True, choices=("lin", "se", "nn"))
    p.add_argument("--layout", required=True, help="single | slices | cube:E")
    p.add_argument("--inference", default="ep", choices=("ep", "la"))
    p.add_argument("--task", default="binary-classification",
                   choices=("binary-classification", "regression"))
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--out", required=True)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--kernel", required=True, choices=("lin", "se", "nn"))
    p.add_argument("--layout", required=True, help="single | slices | cube:E")
    p.add_argument("--inference", default="ep", choices=("ep", "la"))
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--report", required=True)
    p.add_argument("--no-figures", action="store_true",
                   help="skip the PNG figures rendered beside the report")

    p = sub.add_parser("predict", help="predict one volume with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)

    p = sub.add_parser("relevance", help="accumulate relevance scores from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--figure", default=None,
                   help="optional path for a relevance bar chart")
    return parser


def _cmd_generate(args) -> int:
    dims = _parse_dims(args.dims)
    kind, edge = _parse_layout_arg(args.layout, allow_single=False)
    cfg = SyntheticConfig(
        dims=dims,
        n_per_class=args.n,
        n_classes=args.classes,
        layout_kind=kind,
        cube_edge=edge,
        informative_bags=_parse_int_list(args.informative),
        effect_size=args.effect,
        noise_std=args.noise,
        seed=args.seed,
    )
    dataset = generate_synthetic(cfg)
    write_dataset(args.out, dataset)
    print(f"wrote {dataset.X.shape[0]} volumes to {args.out}")
    return EXIT_OK


def _load_binary_dataset(data_dir, layout_arg):
    loaded = read_dataset(data_dir)
    kind, edge = _parse_layout_arg(layout_arg, allow_single=True)
    layout = build_layout(loaded.dims, kind, edge)
    if len(loaded.classes) != 2:
        raise DataFormatError(
            f"binary task needs a 2-class dataset, found {len(loaded.classes)}"
        )
    neg, pos = sorted(loaded.classes)
    y = np.where(loaded.labels == pos, 1.0, -1.0)
    return loaded, layout, y, (neg, pos)


def _cmd_train(args) -> int:
    loaded, layout, y, classes = _load_binary_dataset(args.data, args.layout)
    spec = KernelSpec(args.kernel, layout)
    opts = OptimizeOptions(max_iters=args.max_iters)
    if args.task == "regression":
        target = loaded.labels.astype(float)
        model = train(loaded.X, target, spec, task="regression", opts=opts)
    else:
        model = train(
            loaded.X, y, spec, task="binary-classification",
            opts=opts, inference=args.inference,
        )
        if model.fallback_triggered:
            print(
                "warning: EP failed to converge, fell back to the Laplace "
                "approximation for the whole run",
                file=sys.stderr,
            )
    save_model(args.out, model, loaded.dims)
    print(f"lml: {model.lml:.6g}")
    print(f"inference: {model.inference_used}")
    return EXIT_OK


def _cmd_cv(args) -> int:
    loaded, layout, y, classes = _load_binary_dataset(args.data, args.layout)
    spec = KernelSpec(args.kernel, layout)
    opts = OptimizeOptions(max_iters=args.max_iters)
    report = cross_validate(
        loaded.X,
        y,
        spec,
        opts=opts,
        k=args.folds,
        seed=args.seed,
        inference=args.inference,
        jobs=max(args.jobs, 1),
    )
    if report.fallback_count:
        print(
            f"warning: EP fell back to Laplace in {report.fallback_count} folds",
            file=sys.stderr,
        )
    for fold, msg in sorted(report.errors.items()):
        print(f"warning: fold {fold} failed: {msg}", file=sys.stderr)
    write_cv_report(args.report, report)
    if not args.no_figures:
        from .figures import save_cv_figures

        save_cv_figures(report, args.report)
    print(f"mean_accuracy: {report.mean('accuracy'):.6g}")
    print(f"mean_auc: {report.mean('auc'):.6g}")
    print(f"report: {args.report}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    model = load_model(args.model)
    dims, voxels = read_volume(args.input)
    if voxels.size != model.spec.layout.n_features:
        raise DataFormatError(
            f"volume has {voxels.size} voxels, model expects "
            f"{model.spec.layout.n_features}"
        )
    if model.task == "regression":
        pred = predict_regression(model.posterior, voxels)
        print(f"mean: {pred.mean:.6g}")
        print(f"variance: {pred.variance:.6g}")
        return EXIT_OK
    pred = predict_proba(model.posterior, voxels)
    label = 1 if pred.probability >= 0.5 else -1
    print(f"probability: {pred.probability:.6g}")
    print(f"label: {label}")
    return EXIT_OK


def _cmd_relevance(args) -> int:
    doc = read_cv_report(args.report)
    rows = doc["weight_rows"]
    if rows.shape[0] == 0:
        raise DataFormatError(f"{args.report}: no per-fold weights in report")
    report = relevance_scores(rows)
    print(f"n_folds: {report.n_folds}")
    print(f"n_bags: {report.scores.size}")
    for s, score in enumerate(report.scores):
        print(f"score_{s}: {score:.6g}")
    print("ranking: " + " ".join(str(int(b)) for b in report.ranking))
    if args.figure:
        from .figures import save_relevance_figure

        save_relevance_figure(report, args.figure)
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "cv": _cmd_cv,
    "predict": _cmd_predict,
    "relevance": _cmd_relevance,
}


def run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceFailure, FactorizationError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
