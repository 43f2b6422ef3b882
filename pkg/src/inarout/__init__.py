"""Detection, classification and removal of intervention effects in Poisson INAR(p) count series."""

from .bootstrap import (
    BootstrapResult,
    DetectionConfig,
    DetectionReport,
    bootstrap_test,
    conditional_effect_mean,
    correct_series,
    fit_null,
    run_iterative_detection,
)
from .cls import ClsFit, RankError, f_scan, f_statistic, fit_cls
from .cml import (
    CmlFit,
    DomainError,
    SingularityError,
    Theta,
    conditional_loglik,
    expected_information,
    fit_cml,
    hessian_matrix,
    score_statistic,
    score_vector,
    transition_log_prob,
)
from .detection import (
    MaxResult,
    TestOutcome,
    approximate_critical_value,
    classify_by_max,
    max_statistic,
    test_at,
)
from .process import (
    ConfigurationError,
    ConstantMean,
    CountSeries,
    InarModel,
    Intervention,
    LogLinearMean,
    UnsupportedError,
    binomial_thin,
    simulate_contaminated,
)

__version__ = "0.1.0"
