"""Multi-target split conformal prediction with minimax calibration.

The package provides nonconformity scores and calibration strategies that
hold joint coverage over several prediction targets at once, a synthetic
benchmark suite with a Monte Carlo harness, an early-stopping protocol for
staged predictions, and the ``ctool`` command line runner.
"""

from .calibrate import (
    Calibration,
    EmpiricalCdf,
    Method,
    calibrate_copula,
    calibrate_ia,
    calibrate_maxscore,
    calibrate_minimax,
    calibrate_single,
    conservative_level,
    coverage_mask,
    fit_cdf,
    fit_method,
    interval_array,
    intervals_for,
    raw_threshold,
)
from .core import (
    InsufficientSamplesError,
    IntervalSet,
    LabeledSet,
    QuantileRow,
    Role,
    SplitSpec,
    concat,
    derive_seed,
    partition,
    rng_for,
    split_cal_test,
    trial_rng,
)
from .evaluate import (
    CoverageBoundsReport,
    TrialMetrics,
    coverage_bounds_check,
    mc_slack,
    run_trials,
)
from .multiround import (
    ProtocolResult,
    pilot_tau,
    run_protocol,
    run_sc_baseline,
    sweep_labels,
)
from .scores import (
    ScoreKind,
    cqr_score,
    emp_quantile,
    invert_threshold,
    one_sided_score,
    qn_score,
    score_matrix,
)
from .synthetic import (
    NOISE_COV,
    FitConfig,
    NoiseKind,
    QuantReg,
    RoundConfig,
    cholesky3,
    fit_quantile_models,
    fit_quantreg,
    gen_multiround,
    gen_synthetic,
    predict_quantiles,
    regression_mean,
)

__version__ = "0.1.0"
