"""Monte Carlo harness: repeated cal/test splits, coverage and length metrics.

Each trial re-splits a fixed evaluation pool into calibration and test sets,
calibrates one method, and records the joint-coverage indicator, per-target
coverage, and per-target interval lengths averaged over the test set.  The
tuning set is drawn once outside this module and stays fixed across trials.

Per-trial results are written into preallocated arrays indexed by trial and
reduced with numpy means (pairwise summation), so the reported metrics do not
depend on any execution order and the harness is safe to parallelize over
trials or over (method, alpha) cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calibrate import Calibration, Method, coverage_mask, fit_method, interval_array
from .core import LabeledSet, SplitSpec, split_cal_test, trial_rng
from .scores import ScoreKind, score_matrix


@dataclass(frozen=True)
class TrialMetrics:
    """Averages over Monte Carlo trials.

    ``ejc`` is the empirical joint coverage (all targets at once), ``esc``
    the per-target coverage, and ``mil`` the per-target mean interval length,
    each averaged per test set first and across trials second.  Infinite
    interval lengths propagate into ``mil`` untouched.
    """

    ejc: float
    esc: np.ndarray
    mil: np.ndarray
    trials: int
    n_test: int

    def __post_init__(self) -> None:
        esc = np.asarray(self.esc, dtype=np.float64)
        mil = np.asarray(self.mil, dtype=np.float64)
        esc.setflags(write=False)
        mil.setflags(write=False)
        object.__setattr__(self, "esc", esc)
        object.__setattr__(self, "mil", mil)


def _trial_scores(
    ds: LabeledSet, kind: ScoreKind
) -> np.ndarray:
    return score_matrix(ds.lo, ds.hi, ds.targets, kind)


def evaluate_calibration(
    calib: Calibration, test: LabeledSet
) -> tuple[float, np.ndarray, np.ndarray]:
    """Joint coverage, per-target coverage, and mean lengths on one test set."""
    scores = _trial_scores(test, calib.score_kind)
    covered = coverage_mask(scores, calib)
    ilo, ihi = interval_array(test.lo, test.hi, calib)
    lengths = np.maximum(0.0, ihi - ilo)
    return (
        float(covered.all(axis=1).mean()),
        covered.mean(axis=0),
        lengths.mean(axis=0),
    )


def run_trials(
    data: LabeledSet,
    tune: LabeledSet,
    method: Method,
    score_kind: ScoreKind,
    alpha: float,
    trials: int,
    spec: SplitSpec,
) -> TrialMetrics:
    """Repeated-split evaluation of one method at one level.

    ``data`` is the pooled evaluation set that gets re-split into calibration
    and test sets of sizes ``spec.n_cal`` and ``spec.n_test`` in every trial;
    ``tune`` is the fixed tuning set used by the methods that need one.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    tune_scores = None
    if method in (Method.MINIMAX, Method.COPULA):
        tune_scores = _trial_scores(tune, score_kind)
    n_targets = data.n_targets
    ejc = np.empty(trials)
    esc = np.empty((trials, n_targets))
    mil = np.empty((trials, n_targets))
    for t in range(trials):
        cal, test = split_cal_test(data, spec.n_cal, spec.n_test, trial_rng(spec, t))
        calib = fit_method(
            method, _trial_scores(cal, score_kind), alpha, score_kind, tune_scores
        )
        ejc[t], esc[t], mil[t] = evaluate_calibration(calib, test)
    return TrialMetrics(
        ejc=float(ejc.mean()),
        esc=esc.mean(axis=0),
        mil=mil.mean(axis=0),
        trials=trials,
        n_test=spec.n_test,
    )


@dataclass(frozen=True)
class CoverageBoundsReport:
    """Outcome of the finite-sample coverage sandwich check."""

    passed: bool
    ejc: float
    lower: float
    upper: float
    mc_slack: float
    message: str


def mc_slack(alpha: float, trials: int, n_test: int) -> float:
    """Three-sigma Monte Carlo allowance for an averaged coverage estimate."""
    return 3.0 * math.sqrt(alpha * (1.0 - alpha) / (trials * n_test))


def coverage_bounds_check(
    metrics: TrialMetrics, alpha: float, n_cal: int
) -> CoverageBoundsReport:
    """Check ejc against [1 - alpha, 1 - alpha + 1/(n_cal + 1)] with MC slack.

    The sandwich holds for exchangeable scores with almost-surely distinct
    values; the slack widens both sides by three binomial standard errors so
    a finite harness does not flag ordinary Monte Carlo noise.
    """
    slack = mc_slack(alpha, metrics.trials, metrics.n_test)
    lower = 1.0 - alpha - slack
    upper = 1.0 - alpha + 1.0 / (n_cal + 1) + slack
    passed = lower <= metrics.ejc <= upper
    if passed:
        message = f"ejc={metrics.ejc:.4f} within [{lower:.4f}, {upper:.4f}]"
    elif metrics.ejc > upper:
        message = f"ejc={metrics.ejc:.4f}: over-coverage beyond the {upper:.4f} bound"
    else:
        message = f"ejc={metrics.ejc:.4f}: under-coverage below the {lower:.4f} bound"
    return CoverageBoundsReport(
        passed=passed,
        ejc=metrics.ejc,
        lower=lower,
        upper=upper,
        mc_slack=slack,
        message=message,
    )
