"""Cross-validation, binary metrics, ROC/AUC and one-vs-all multiclass."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .gp_classification import predict_proba
from .kernels import KernelSpec
from .optimize import OptimizeOptions, TrainedModel, train

__all__ = [
    "ConfusionCounts",
    "CVReport",
    "OVAModel",
    "stratified_kfold",
    "confusion_counts",
    "confusion_metrics",
    "roc_auc",
    "ova_train",
    "ova_predict",
    "cross_validate",
]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def stratified_kfold(labels, k: int, seed: int) -> np.ndarray:
    """Fold index per sample, class proportions balanced within one sample.

    Each class's members are shuffled with the seeded generator and dealt
    round-robin over the folds, so per-class fold counts differ by at most
    one.  The assignment is a pure function of (labels, k, seed).
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds = np.empty(labels.shape[0], dtype=int)
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        if idx.size < k:
            raise ValueError(
                f"class {cls!r} has {idx.size} members, fewer than k={k}"
            )
        perm = rng.permutation(idx)
        folds[perm] = np.arange(perm.size) % k
    return folds


def confusion_counts(y_true, y_pred) -> ConfusionCounts:
    """Tally a +1/-1 prediction vector against the true labels."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    return ConfusionCounts(
        tp=int(np.sum((y_true == 1) & (y_pred == 1))),
        tn=int(np.sum((y_true == -1) & (y_pred == -1))),
        fp=int(np.sum((y_true == -1) & (y_pred == 1))),
        fn=int(np.sum((y_true == 1) & (y_pred == -1))),
    )


def confusion_metrics(counts: ConfusionCounts) -> tuple[float, float, float]:
    """(accuracy, sensitivity, specificity) from confusion counts."""
    if counts.total == 0:
        raise ValueError("no cases to evaluate")
    if counts.tp + counts.fn == 0:
        raise ValueError("sensitivity undefined: no positive cases")
    if counts.tn + counts.fp == 0:
        raise ValueError("specificity undefined: no negative cases")
    accuracy = (counts.tp + counts.tn) / counts.total
    sensitivity = counts.tp / (counts.tp + counts.fn)
    specificity = counts.tn / (counts.tn + counts.fp)
    return accuracy, sensitivity, specificity


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via rank statistics.

    Equals the probability that a random positive outranks a random
    negative, counting ties as one half; this matches the exhaustive
    pairwise computation to round-off.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    neg = labels == -1
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=float)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class OVAModel:
    """One binary model per class, each trained class-vs-rest."""

    classes: tuple
    models: tuple[TrainedModel, ...]

    def __post_init__(self) -> None:
        if len(self.classes) < 2 or len(self.models) != len(self.classes):
            raise ValueError("need one model per class and at least two classes")


def ova_train(
    X,
    labels,
    spec: KernelSpec,
    opts: OptimizeOptions | None = None,
    inference: str = "ep",
) -> OVAModel:
    """Train one class-vs-rest classifier per distinct label."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    classes = tuple(np.unique(labels).tolist())
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    models = []
    for cls in classes:
        y = np.where(labels == cls, 1.0, -1.0)
        models.append(
            train(X, y, spec, task="binary-classification", opts=opts, inference=inference)
        )
    return OVAModel(classes=classes, models=tuple(models))


def ova_predict(model: OVAModel, x_star) -> tuple[object, np.ndarray]:
    """Predicted class and the per-class averaged probabilities.

    The winner is the argmax probability; exact ties go to the smallest
    class index.
    """
    probs = np.array(
        [predict_proba(m.posterior, x_star).probability for m in model.models]
    )
    return model.classes[int(np.argmax(probs))], probs


@dataclass
class CVReport:
    """Per-fold metrics and learned mixing weights from one CV run."""

    n_folds: int
    seed: int
    kernel_kind: str
    layout_tag: str
    accuracies: np.ndarray
    sensitivities: np.ndarray
    specificities: np.ndarray
    aucs: np.ndarray
    weights: np.ndarray  # (n_folds, n_bags), squared amplitudes per bag
    fallbacks: np.ndarray  # bool per fold
    errors: dict[int, str] = field(default_factory=dict)
    pooled_auc: float | None = None

    _METRICS = ("accuracy", "sensitivity", "specificity", "auc")

    def metric(self, name: str) -> np.ndarray:
        return {
            "accuracy": self.accuracies,
            "sensitivity": self.sensitivities,
            "specificity": self.specificities,
            "auc": self.aucs,
        }[name]

    def mean(self, name: str) -> float:
        vals = self.metric(name)
        return float(np.nanmean(vals))

    def std(self, name: str) -> float:
        vals = self.metric(name)
        ok = vals[~np.isnan(vals)]
        if ok.size <= 1:
            return 0.0
        return float(np.std(ok, ddof=1))

    @property
    def n_failed(self) -> int:
        return len(self.errors)

    @property
    def fallback_count(self) -> int:
        return int(self.fallbacks.sum())


def _run_fold(fold, X, y, folds, spec, opts, inference):
    test = folds == fold
    model = train(
        X[~test],
        y[~test],
        spec,
        task="binary-classification",
        opts=opts,
        inference=inference,
    )
    probs = np.array(
        [predict_proba(model.posterior, x).probability for x in X[test]]
    )
    preds = np.where(probs >= 0.5, 1.0, -1.0)  # p >= 0.5 predicts +1
    acc, sens, spec_rate = confusion_metrics(confusion_counts(y[test], preds))
    auc = roc_auc(probs, y[test])
    weights = np.exp(2.0 * model.hp.log_sigma_f)
    return acc, sens, spec_rate, auc, weights, model.fallback_triggered, probs, test


def cross_validate(
    X,
    y,
    spec: KernelSpec,
    opts: OptimizeOptions | None = None,
    k: int = 10,
    seed: int = 0,
    inference: str = "ep",
    jobs: int = 1,
    pooled_auc: bool = False,
) -> CVReport:
    """Stratified k-fold cross-validation of a binary classifier.

    Folds are independent and may run concurrently (``jobs`` worker
    processes, since fold training is CPU-bound); the report is identical
    regardless of the execution order.  A fold whose training fails
    outright is recorded in ``errors`` rather than dropped.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    folds = stratified_kfold(y, k, seed)
    n_bags = spec.n_kernels

    acc = np.full(k, np.nan)
    sens = np.full(k, np.nan)
    spec_rate = np.full(k, np.nan)
    auc = np.full(k, np.nan)
    weights = np.full((k, n_bags), np.nan)
    fallbacks = np.zeros(k, dtype=bool)
    errors: dict[int, str] = {}
    pooled_scores = np.full(y.shape[0], np.nan)

    results: dict[int, object] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                fold: pool.submit(
                    _run_fold, fold, X, y, folds, spec, opts, inference
                )
                for fold in range(k)
            }
            for fold, fut in futures.items():
                try:
                    results[fold] = fut.result()
                except Exception as exc:  # recorded, not dropped
                    errors[fold] = f"{type(exc).__name__}: {exc}"
    else:
        for fold in range(k):
            try:
                results[fold] = _run_fold(fold, X, y, folds, spec, opts, inference)
            except Exception as exc:
                errors[fold] = f"{type(exc).__name__}: {exc}"

    for fold, res in results.items():
        acc[fold], sens[fold], spec_rate[fold], auc[fold] = res[:4]
        weights[fold] = res[4]
        fallbacks[fold] = res[5]
        pooled_scores[res[7]] = res[6]

    pooled = None
    if pooled_auc and np.isfinite(pooled_scores).all():
        pooled = roc_auc(pooled_scores, y)
    return CVReport(
        n_folds=k,
        seed=seed,
        kernel_kind=spec.kind,
        layout_tag=spec.layout.kind_tag,
        accuracies=acc,
        sensitivities=sens,
        specificities=spec_rate,
        aucs=auc,
        weights=weights,
        fallbacks=fallbacks,
        errors=errors,
        pooled_auc=pooled,
    )
