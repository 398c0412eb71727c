"""Estimation and bootstrap inference for exchangeable data arrays.

The package covers dyadic/polyadic samples (observations indexed by tuples
of distinct units) and multiway-clustered grids, providing:

* synthetic array generation from latent-factor models (``arrays``),
* empirical means, cdfs, and limit-covariance plug-ins (``empirical``),
* unit-multinomial, pigeonhole, and multiplier resampling (``bootstrap``),
* moment estimation with PPML as the flagship instance (``estimators``),
* a paired Kolmogorov-Smirnov stability test (``kstest``),
* Monte Carlo verification studies (``montecarlo``),
* a batch command line (``cli``).
"""

__version__ = "0.1.0"

from .arrays import (
    AhkModel,
    JointArray,
    SeparateArray,
    enumerate_tuples,
    generate_joint,
    generate_separate,
    read_joint_csv,
    relabel,
    write_joint_csv,
)
from .bootstrap import (
    MULTIPLIER,
    PIGEONHOLE,
    POLYADIC,
    BootstrapPlan,
    ReplicateSet,
    UnitWeights,
    bootstrap_process_joint,
    bootstrap_process_separate,
    draw_pigeonhole_weights,
    draw_polyadic_weights,
    multiplier_process,
    percentile_interval,
    tail_pvalue,
)
from .empirical import (
    EmpiricalCdf,
    KernelEstimate,
    SeparateKernelEstimate,
    Statistic,
    component,
    empirical_cdf,
    empirical_mean,
    empirical_process_value,
    estimate_kernel_joint,
    estimate_kernel_separate,
    indicator_leq,
)
from .estimators import (
    GravityData,
    InferenceReport,
    MomentModel,
    ppml_bootstrap_pvalues,
    ppml_fit,
    ppml_inference,
    quantile_estimate,
    variance_compare,
    zestimate,
)
from .kstest import KsResult, ks_compare_assumptions, ks_paired
from .montecarlo import (
    DGPS,
    McConfig,
    McSummary,
    clt_variance_study,
    coverage_study,
    degenerate_limit_study,
    parse_config,
    run_study,
)

__all__ = [name for name in dir() if not name.startswith("_")]
