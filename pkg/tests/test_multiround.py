"""Early-stopping protocol: walks, accounting, baselines, and pilot thresholds."""

import dataclasses

import numpy as np
import pytest

from mtconf import (
    Calibration,
    Method,
    Role,
    RoundConfig,
    ScoreKind,
    SplitSpec,
    fit_method,
    gen_multiround,
    mc_slack,
    pilot_tau,
    run_protocol,
    run_sc_baseline,
    sweep_labels,
)
from mtconf.multiround import _walk
from mtconf.scores import score_matrix


CFG = RoundConfig()
DATA = gen_multiround(900, CFG, seed=40, role=Role.CAL)
TUNE = gen_multiround(300, CFG, seed=41, role=Role.TUNE)
SPEC = SplitSpec(seed=42, n_tune=1, n_cal=600, n_test=300)


def with_tau(tau):
    return dataclasses.replace(CFG, tau=tau)


def test_infinite_threshold_accepts_the_first_round():
    res = run_protocol(DATA, TUNE, Method.MINIMAX, 0.1, with_tau(np.inf), 5, SPEC)
    assert res.histogram[0] == 5 * SPEC.n_test
    assert np.all(res.histogram[1:] == 0)
    assert res.r_avg == CFG.rates[0]
    assert res.eac >= 1 - 0.1 - mc_slack(0.1, res.trials, res.n_test)


def test_tiny_threshold_pushes_walks_to_the_last_round():
    # not exactly all of them: bands clipped at the unit-interval boundary can
    # collapse to zero length and still qualify under a vanishing threshold
    tiny = run_protocol(DATA, TUNE, Method.MINIMAX, 0.1, with_tau(1e-9), 5, SPEC)
    default = run_protocol(DATA, TUNE, Method.MINIMAX, 0.1, CFG, 5, SPEC)
    total = 5 * SPEC.n_test
    assert tiny.histogram[-1] >= 0.95 * total
    assert tiny.r_avg <= default.r_avg
    rounds = np.arange(CFG.rounds)
    assert np.average(rounds, weights=tiny.histogram) >= np.average(
        rounds, weights=default.histogram
    )


def test_histogram_accounts_for_every_test_sample():
    res = run_protocol(DATA, TUNE, Method.MINIMAX, 0.1, CFG, 6, SPEC)
    assert res.histogram.sum() == 6 * SPEC.n_test
    assert min(CFG.rates) <= res.r_avg <= max(CFG.rates)
    # accepted-round coverage is implied whenever every round is covered
    assert res.eac >= res.ejc_all - 1e-12
    with pytest.raises(ValueError, match="read-only"):
        res.histogram[0] = 0


def test_walk_takes_the_first_round_that_fits():
    cfg = RoundConfig(rounds=3, tasks=2, sigma=(0.3, 0.2, 0.1), rates=(4.0, 2.0, 1.0), tau=0.1)
    lengths = np.array(
        [
            [5.0, 5.0, 0.20, 0.05, 0.01, 0.01],  # round 1 half-fits, round 2 fits
            [5.0, 5.0, 0.05, 0.05, 0.01, 0.01],  # round 1 fits outright
            [5.0, 5.0, 0.20, 0.20, 0.20, 0.20],  # nothing fits
        ]
    )
    covered = np.array(
        [
            [True, True, True, True, True, False],
            [True, True, True, False, True, True],
            [True, True, True, True, True, True],
        ]
    )
    accepted, accepted_cov = _walk(lengths, covered, cfg)
    assert accepted.tolist() == [2, 1, 2]
    assert accepted_cov.tolist() == [False, False, True]


def test_walk_accepted_round_is_monotone_in_the_threshold():
    rng = np.random.default_rng(43)
    lengths = rng.uniform(0.0, 1.0, size=(60, 5)) * np.array([1.0, 0.8, 0.5, 0.3, 0.2])
    covered = np.ones_like(lengths, dtype=bool)
    cfg = RoundConfig()
    previous = np.full(60, -1)
    for tau in (0.8, 0.4, 0.2, 0.1, 0.05):
        accepted, _ = _walk(lengths, covered, dataclasses.replace(cfg, tau=tau))
        assert np.all(accepted >= previous)
        previous = accepted


def test_sc_baseline_equals_plain_conformal_for_one_round():
    cfg1 = RoundConfig(rounds=1, sigma=(0.1,), rates=(1.0,), tau=np.inf)
    data = gen_multiround(500, cfg1, seed=44)
    tune = gen_multiround(100, cfg1, seed=45)
    spec = SplitSpec(seed=46, n_tune=1, n_cal=300, n_test=200)
    sc = run_sc_baseline(data, tune, 0.1, cfg1, 4, spec)
    plain = run_protocol(data, tune, Method.SINGLE, 0.1, cfg1, 4, spec)
    assert sc.eac == plain.eac
    assert np.array_equal(sc.histogram, plain.histogram)
    assert sc.ejc_all == plain.ejc_all


def test_sc_baseline_covers_without_early_stopping():
    res = run_sc_baseline(DATA, TUNE, 0.1, with_tau(np.inf), 5, SPEC)
    assert res.eac >= 1 - 0.1 - mc_slack(0.1, res.trials, res.n_test)


def test_pilot_tau_matches_the_quantile_of_round_widths():
    widths = DATA.hi - DATA.lo
    cols = slice((CFG.rounds - 2) * CFG.tasks, (CFG.rounds - 1) * CFG.tasks)
    want = float(np.quantile(widths[:, cols].max(axis=1), 0.5))
    assert pilot_tau(DATA, CFG) == pytest.approx(want)
    assert pilot_tau(DATA, CFG, quantile=0.25) <= pilot_tau(DATA, CFG, quantile=0.75)
    assert pilot_tau(DATA, CFG, round_idx=0) > pilot_tau(DATA, CFG, round_idx=CFG.rounds - 1)


def test_pilot_tau_with_a_calibration_adds_the_margins():
    zeta = 0.05
    calib = Calibration(
        method=Method.IA,
        score_kind=ScoreKind.CQR,
        alpha=0.1,
        per_target_zeta=np.full(CFG.rounds * CFG.tasks, zeta),
    )
    raw = pilot_tau(DATA, CFG)
    conformalized = pilot_tau(DATA, CFG, calib=calib)
    assert conformalized == pytest.approx(raw + 2 * zeta)


def test_pilot_tau_with_a_fitted_calibration_is_usable():
    scores = score_matrix(DATA.lo, DATA.hi, DATA.targets, ScoreKind.CQR)
    tune_scores = score_matrix(TUNE.lo, TUNE.hi, TUNE.targets, ScoreKind.CQR)
    calib = fit_method(Method.MINIMAX, scores, 0.1, ScoreKind.CQR, tune_scores)
    tau = pilot_tau(DATA, CFG, calib=calib)
    assert np.isfinite(tau) and tau > 0


def test_sweep_labels_accounting():
    spec = SplitSpec(seed=48, n_tune=150, n_cal=400, n_test=200)
    results = sweep_labels([1, 2, 3], CFG, Method.MINIMAX, 0.1, 5, spec, data_seed=47)
    assert len(results) == 3
    for res in results:
        assert res.histogram.sum() == 5 * spec.n_test
        assert 0.0 <= res.eac <= 1.0
    # more parallel tasks cannot speed the walk up
    r = [res.r_avg for res in results]
    assert r[1] <= r[0] + 0.05 and r[2] <= r[1] + 0.05


def test_protocol_rejects_mismatched_layout():
    with pytest.raises(ValueError, match="round layout"):
        run_protocol(DATA, TUNE, Method.MINIMAX, 0.1, dataclasses.replace(CFG, rounds=3, sigma=CFG.sigma[:3], rates=CFG.rates[:3]), 2, SPEC)
