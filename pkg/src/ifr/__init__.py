"""Single-index regression for metric-space-valued responses.

A direction on the unit hemisphere is estimated by minimizing a binned
criterion built on local linear Fréchet regression along the index, with
Wald-type inference via bootstrap covariance and a simulation harness for
distributional, matrix, spherical, and Euclidean responses.
"""

from .exceptions import IfrError
from .index_fit import (
    BinnedSample,
    DirectionParam,
    FitConfig,
    IfrFit,
    criterion_vn,
    fit_ifr,
    gfr_fit,
    lift,
    make_bins,
    predict,
    sample_directions,
)
from .inference import (
    CovarianceEstimate,
    ConfidenceRegion,
    TestResult,
    bootstrap_lambda,
    chi_square_quantile,
    chi_square_sf,
    confidence_region,
    grad_vn,
    hess_vn,
    lambda_plugin,
    noncentral_chi_square_sf,
    power_at,
    sigma_hat,
    wald_test,
)
from .local_frechet import (
    KernelFamily,
    KernelSpec,
    LocalWeights,
    cv_bandwidth,
    empirical_weights,
    llfr_fit_at,
)
from .metric_spaces import (
    EuclideanVec,
    MetricSpaceKind,
    ObjectSet,
    QuantileFunction,
    SpherePoint,
    SymMatrix,
    default_prob_grid,
    distance,
    fiedler_value,
    project_to_space,
    weighted_frechet_mean,
)
from .simulation import (
    McReport,
    SimSpec,
    bias_dev,
    msd,
    rmpe,
    run_mc_study,
    run_size_power_study,
)

__version__ = "0.1.0"
