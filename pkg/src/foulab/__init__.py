"""foulab: Monte Carlo laboratory for scaling limits of slow/fast systems
driven by fractional Ornstein-Uhlenbeck noise."""

from .chaos import (
    ChaosExpansion,
    ScalingExponents,
    chaos_coefficients,
    classify_limit,
    fast_decay_norm,
    hermite_eval,
    hermite_eval_weighted,
    hermite_sup_bound_check,
    hstar,
    scaling_alpha,
)
from .gaussian_paths import (
    FouConfig,
    GridPath,
    conditional_cov_decay,
    correlation_integral,
    fbm_sample,
    fgn_sample,
    fou_correlation,
    fou_ensemble,
    fou_sample,
    fou_sigma,
    kernel_h_eps,
    kernel_l2_gap,
    ou_kernel_g,
)
from .hermite_process import HermiteSpec, calibrate_K, hermite_kernel, hermite_sample
from .rough_core import (
    RoughGridPath,
    add_drift_area,
    canonical_lift,
    holder_seminorm,
    rde_solve,
    rough_metric,
    rough_norm,
    young_integrate,
)
from .scaling_limits import (
    AMatrix,
    LimitSpec,
    a_matrix,
    area_drift_estimate,
    build_limit_spec,
    c_squared,
    clt_marginal_test,
    hermite_limit_test,
    independence_test,
    lift_functional,
    path_functional,
)
from .stats import ExperimentReport, ensemble_moments, ks_one_sample, ks_two_sample, loglog_slope

__version__ = "0.1.0"
