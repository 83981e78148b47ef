"""Early-stopping protocol over staged predictions and its evaluation.

A staged process produces one block of ``tasks`` intervals per round, rounds
getting tighter but slower.  The protocol walks the rounds in order and
accepts the first round whose intervals are all no longer than ``tau``
(falling back to the last round), trading interval tightness against the
per-round speed-up factors.  Calibrating all rounds jointly keeps the
accepted-round coverage honest no matter where the walk stops; calibrating
each round separately does not, because acceptance selects on interval
length, which is informative about conformity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .calibrate import Calibration, Method, coverage_mask, fit_method, interval_array
from .core import LabeledSet, Role, SplitSpec, concat, partition, split_cal_test, trial_rng
from .scores import ScoreKind, score_matrix
from .synthetic import RoundConfig, gen_multiround


@dataclass(frozen=True)
class ProtocolResult:
    """Accepted-round coverage and throughput of one protocol run.

    ``eac`` averages the indicator that the accepted round's intervals cover
    all of that round's targets.  ``r_avg`` is the harmonic-style average
    speed-up: trial means of inverse rates are averaged and inverted, so it
    equals total truths over total acquisition cost.  ``histogram`` counts
    accepted rounds pooled over trials and test samples.  ``ejc_all`` is the
    plain joint coverage over every round at once, kept for diagnostics.
    """

    eac: float
    r_avg: float
    histogram: np.ndarray
    ejc_all: float
    trials: int
    n_test: int

    def __post_init__(self) -> None:
        hist = np.asarray(self.histogram, dtype=np.int64)
        hist.setflags(write=False)
        object.__setattr__(self, "histogram", hist)


def _stop_lengths(
    test: LabeledSet, calib: Calibration, floor: float
) -> np.ndarray:
    """Interval lengths used by the stopping rule, (n, K).

    One-sided intervals have no finite length, so the rule measures the upper
    endpoint against a configured floor instead.
    """
    ilo, ihi = interval_array(test.lo, test.hi, calib)
    if calib.score_kind.one_sided:
        return ihi - floor
    return np.maximum(0.0, ihi - ilo)


def _walk(
    lengths: np.ndarray, covered: np.ndarray, cfg: RoundConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Accepted round index and accepted-round coverage per test sample."""
    n = lengths.shape[0]
    ok = (lengths <= cfg.tau).reshape(n, cfg.rounds, cfg.tasks).all(axis=2)
    any_ok = ok.any(axis=1)
    accepted = np.where(any_ok, ok.argmax(axis=1), cfg.rounds - 1)
    cov_round = covered.reshape(n, cfg.rounds, cfg.tasks).all(axis=2)
    accepted_cov = cov_round[np.arange(n), accepted]
    return accepted, accepted_cov


def _round_slice(cfg: RoundConfig, b: int) -> slice:
    return slice(b * cfg.tasks, (b + 1) * cfg.tasks)


def _per_round_calibration(
    tune_s: np.ndarray,
    cal_s: np.ndarray,
    alpha: float,
    cfg: RoundConfig,
    method: Method,
    score_kind: ScoreKind,
) -> np.ndarray:
    """Thresholds from calibrating every round on its own at full level."""
    zetas = np.empty(cfg.n_targets)
    for b in range(cfg.rounds):
        cols = _round_slice(cfg, b)
        if cfg.tasks == 1:
            rcal = fit_method(Method.SINGLE, cal_s[:, cols], alpha, score_kind)
        else:
            rcal = fit_method(method, cal_s[:, cols], alpha, score_kind, tune_s[:, cols])
        zetas[cols] = rcal.margins(cfg.tasks)
    return zetas


def _protocol_trials(
    data: LabeledSet,
    tune: LabeledSet,
    alpha: float,
    cfg: RoundConfig,
    trials: int,
    spec: SplitSpec,
    score_kind: ScoreKind,
    method: Method,
    per_round: bool,
    length_floor: float,
) -> ProtocolResult:
    if trials < 1:
        raise ValueError("need at least one trial")
    if data.n_targets != cfg.n_targets:
        raise ValueError("data does not match the round layout")
    tune_s = score_matrix(tune.lo, tune.hi, tune.targets, score_kind)
    eac = np.empty(trials)
    inv_rate = np.empty(trials)
    ejc_all = np.empty(trials)
    hist = np.zeros(cfg.rounds, dtype=np.int64)
    rates = np.asarray(cfg.rates, dtype=np.float64)
    for t in range(trials):
        cal, test = split_cal_test(data, spec.n_cal, spec.n_test, trial_rng(spec, t))
        cal_s = score_matrix(cal.lo, cal.hi, cal.targets, score_kind)
        if per_round:
            zetas = _per_round_calibration(tune_s, cal_s, alpha, cfg, method, score_kind)
            calib = Calibration(
                method=method,
                score_kind=score_kind,
                alpha=alpha,
                per_target_zeta=zetas,
            )
        else:
            calib = fit_method(method, cal_s, alpha, score_kind, tune_s)
        test_s = score_matrix(test.lo, test.hi, test.targets, score_kind)
        covered = coverage_mask(test_s, calib)
        lengths = _stop_lengths(test, calib, length_floor)
        accepted, accepted_cov = _walk(lengths, covered, cfg)
        eac[t] = accepted_cov.mean()
        inv_rate[t] = np.mean(1.0 / rates[accepted])
        ejc_all[t] = covered.all(axis=1).mean()
        hist += np.bincount(accepted, minlength=cfg.rounds)
    return ProtocolResult(
        eac=float(eac.mean()),
        r_avg=float(1.0 / inv_rate.mean()),
        histogram=hist,
        ejc_all=float(ejc_all.mean()),
        trials=trials,
        n_test=spec.n_test,
    )


def run_protocol(
    data: LabeledSet,
    tune: LabeledSet,
    method: Method,
    alpha: float,
    cfg: RoundConfig,
    trials: int,
    spec: SplitSpec,
    score_kind: ScoreKind = ScoreKind.CQR,
    length_floor: float = 0.0,
) -> ProtocolResult:
    """Early-stopping evaluation with all rounds calibrated jointly."""
    return _protocol_trials(
        data, tune, alpha, cfg, trials, spec, score_kind, method, False, length_floor
    )


def run_sc_baseline(
    data: LabeledSet,
    tune: LabeledSet,
    alpha: float,
    cfg: RoundConfig,
    trials: int,
    spec: SplitSpec,
    score_kind: ScoreKind = ScoreKind.CQR,
    method: Method = Method.MINIMAX,
    length_floor: float = 0.0,
) -> ProtocolResult:
    """Early-stopping evaluation with each round calibrated separately.

    Single-task rounds use plain split conformal; multi-task rounds use
    ``method`` per round.  Every round is calibrated at the full level, so
    any shortfall in ``eac`` is pure length-selection bias.
    """
    return _protocol_trials(
        data, tune, alpha, cfg, trials, spec, score_kind, method, True, length_floor
    )


def pilot_tau(
    data: LabeledSet,
    cfg: RoundConfig,
    calib: Calibration | None = None,
    round_idx: int | None = None,
    quantile: float = 0.5,
    length_floor: float = 0.0,
) -> float:
    """A stopping threshold that makes roughly the given fraction stop early.

    Takes the given quantile of one round's interval lengths (default: the
    next-to-last round, the widest chance to stop before the final one).
    With a calibration the lengths include the conformal margins that the
    protocol will actually compare against ``tau``; without one the raw band
    widths are used.  Lengths shrink across rounds, so a threshold placed at
    quantile q of round b accepts roughly that fraction of samples by then.
    """
    if round_idx is None:
        round_idx = max(cfg.rounds - 2, 0)
    cols = _round_slice(cfg, round_idx)
    if calib is None:
        lengths = data.hi[:, cols] - data.lo[:, cols]
    else:
        lengths = _stop_lengths(data, calib, length_floor)[:, cols]
    return float(np.quantile(lengths.max(axis=1), quantile))


def sweep_labels(
    label_values: list[int],
    base_cfg: RoundConfig,
    method: Method,
    alpha: float,
    trials: int,
    spec: SplitSpec,
    data_seed: int,
    n: int | None = None,
    score_kind: ScoreKind = ScoreKind.CQR,
    quantile_alpha: float = 0.1,
) -> list[ProtocolResult]:
    """Protocol results across task counts with nested draws.

    For each entry of ``label_values`` the round layout is rebuilt with that
    many tasks and fresh data is generated under ``data_seed``; the generator
    keys its substreams by task index, so smaller task counts reuse a prefix
    of the larger ones' draws and the sweep is monotone sample by sample.
    """
    if n is None:
        n = spec.total
    results = []
    for labels in label_values:
        cfg = replace(base_cfg, tasks=labels)
        data = gen_multiround(n, cfg, data_seed, quantile_alpha=quantile_alpha)
        tune, cal, test = partition(data, spec)
        pool = concat([cal, test], Role.CAL)
        results.append(
            run_protocol(pool, tune, method, alpha, cfg, trials, spec, score_kind)
        )
    return results
