"""Count+ sketching with empirically calibrated count estimation.

The sketch side is the familiar depth x width counter matrix.  The
estimation side treats the counters an item does not touch as a large
sample from the collision-error distribution, and runs everything off that:
debiased statistics, tight finite-sample intervals, a log-concave
maximum-likelihood error density powering MLE/Bayes estimators, joint
regression over item sets, and width prediction for tuning depth against a
memory budget.
"""

from .empirical import (
    EmpiricalCdf,
    ErrorSample,
    bootstrap_statistic_distribution,
    column_statistic_distribution,
    error_sample,
    order_statistic_mean,
    should_refresh,
)
from .estimators import (
    CounterBraidsResult,
    DebiasPreprocess,
    Estimate,
    EstimateWithInterval,
    Statistic,
    bayes_estimate,
    counter_braids,
    debias,
    debiased_min,
    debiased_mle,
    max_statistic,
    mean_statistic,
    median_statistic,
    min_estimate,
    min_statistic,
    mle_estimate,
    mle_statistic,
    preprocess_bootstrap,
    preprocess_columns,
    quantile_statistic,
    translation_check,
    trimmed_mean_statistic,
)
from .intervals import (
    ConfidenceInterval,
    beta_inv_cdf,
    bootstrap_ci,
    markov_ci,
    markov_optimized_width,
    markov_width,
    order_statistic_ci,
    width_ratio_report,
)
from .logconcave import (
    LogConcaveDensity,
    fit,
    fit_weighted,
    optimality_certificate,
    project_decreasing_check,
)
from .regression import DesignMatrix, JointEstimate, joint_mle, least_squares
from .simlab import (
    CountDistribution,
    EvalReport,
    ScenarioConfig,
    coverage,
    generate,
    relative_efficiency,
    run_scenario,
)
from .sketch import (
    CountPlusSketch,
    IndexSet,
    SketchConfig,
    ingest_tsv,
    sketch_stream,
)
from .tuning import (
    GriddedDistribution,
    TuningCurve,
    compound_poisson_pmf,
    convolve_power,
    empirical_error_pmf,
    width_curve,
)

__version__ = "0.1.0"
