"""Density deconvolution for data with heteroscedastic Gaussian measurement error."""

from .bandwidth import (
    LambdaSearchSpec,
    MiseSelection,
    build_lambda_grid,
    mise_objective,
    rot_bandwidth,
    rot_bandwidth_y,
    rot_lambda1,
    select_lambda1_mise,
    select_lambda1_rot,
)
from .errors import (
    BoundaryWarning,
    DeconvolveError,
    ExperimentFailedError,
    IllConditionedError,
    InvalidInputError,
    KernelOverflowError,
    PlanValidationError,
    SupportTruncationWarning,
)
from .fourier import (
    Bandwidth,
    adjusted_dke_estimate,
    dke_estimate,
    dke_plugin_bandwidth,
    naive_kde,
)
from .kernels import (
    QuadratureSpec,
    adjusted_deconv_kernel,
    deconv_kernel_gaussian,
    gaussian_pdf,
    phi_K,
    psi_Uj,
    supersmooth_kernel,
)
from .model import (
    ContaminatedSample,
    DensityEstimate,
    EvaluationGrid,
    harmonic_mean_sigma,
    is_homoscedastic,
    mean_sigma,
)
from .simex import (
    ExtrapolationPlan,
    LambdaGrid,
    build_plan,
    clip_nonnegative,
    mc_simulation_oracle,
    pseudo_density,
    simex_confidence_band,
    simex_estimate,
    simex_variance,
)
from .simlab import (
    ErrorConfig,
    ExperimentPlan,
    SummaryTable,
    TrueDensity,
    contaminate,
    ise,
    run_experiment,
    sample_true,
)

__version__ = "0.1.0"
