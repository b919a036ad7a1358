"""Decision fusion for segmentation ensembles via class-specific copulas."""

__version__ = "0.1.0"

from .copulas import (
    CLAMP_EPS,
    CopulaParams,
    Family,
    archimedean_params,
    clamp_unit,
    copula_cdf,
    copula_density,
    copula_log_density,
    elliptical_params,
    equicorrelation,
    independence_params,
    sample_copula,
    std_normal_quantile,
    student_t_quantile,
)
from .fitting import (
    FitReport,
    SelectionReport,
    fit_copula_ifm,
    fit_statistics,
    kendall_tau,
    pseudo_observations,
    select_family,
)
from .fusion import (
    ClassModelSet,
    FitSettings,
    FusedResult,
    build_class_models,
    estimate_priors,
    force_family_variant,
    fuse_dataset,
    fuse_pixel,
    load_model,
    save_model,
)
from .kde import KdeModel, kde_cdf, kde_log_pdf, kde_pdf, silverman_bandwidth
from .metrics import ConfusionMatrix, accumulate, class_accuracy, iou, overall_accuracy
from .baselines import logit_fuse, lop_fuse, majority_vote
from .simulate import BenchmarkReport, ScenarioConfig, benchmark, default_scenario, generate
