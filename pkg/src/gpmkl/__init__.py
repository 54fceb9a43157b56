"""Gaussian process classifiers and regressors over volumetric inputs,
with covariances built as conic sums of basis kernels on feature bags."""

from .kernels import (
    GramMatrix,
    HyperParams,
    KernelCache,
    KernelSpec,
    composite_kernel,
    cross_covariances,
    gram,
    gram_gradient,
    kernel_lin,
    kernel_nn,
    kernel_se,
)
from .subspaces import (
    RelevanceReport,
    SubspaceLayout,
    VolumeDims,
    cube_layout,
    extract_subvector,
    relevance_scores,
    single_layout,
    slice_layout,
)
from .gp_regression import (
    PredictiveGaussian,
    RegressionPosterior,
    fit_exact,
    log_marginal_likelihood,
    predict_regression,
)
from .gp_classification import (
    ConvergenceFailure,
    LatentPosterior,
    PredictiveClass,
    SiteParams,
    averaged_sigmoid,
    ep_fit,
    laplace_fit,
    predict_proba,
)
from .optimize import (
    MinimizeResult,
    OptimizeOptions,
    TrainedModel,
    default_hyperparams,
    minimize,
    train,
)
from .evaluation import (
    ConfusionCounts,
    CVReport,
    OVAModel,
    confusion_counts,
    confusion_metrics,
    cross_validate,
    ova_predict,
    ova_train,
    roc_auc,
    stratified_kfold,
)
from .datagen import Dataset, SyntheticConfig, build_layout, generate_synthetic
from .linalg import FactorizationError

__version__ = "0.1.0"
