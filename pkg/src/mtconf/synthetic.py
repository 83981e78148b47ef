"""Synthetic three-target regression data and a staged multi-round generator.

The regression generator produces one scalar feature and three heterogeneous
targets (different scales, different noise families) so that joint-coverage
methods have something asymmetric to balance.  The multi-round generator
mimics a staged acquisition process: the same latent truths are predicted in
several rounds of decreasing noise, and each round contributes its own block
of targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import LabeledSet, Role, rng_for
from .scores import _ceil_rank

# Noise cross-correlation used by the correlated variant.
NOISE_COV = np.array(
    [
        [1.0, 0.8, 0.7],
        [0.8, 1.0, 0.4],
        [0.7, 0.4, 1.0],
    ]
)
NOISE_COV.setflags(write=False)


class NoiseKind(str, Enum):
    INDEPENDENT = "independent"
    CORRELATED = "correlated"


def regression_mean(u: np.ndarray) -> np.ndarray:
    """Noise-free responses [10u + 10, -2u + 1, 0.1u^2] as an (n, 3) array."""
    u = np.asarray(u, dtype=np.float64)
    return np.column_stack([10.0 * u + 10.0, -2.0 * u + 1.0, 0.1 * u**2])


def cholesky3(matrix: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite 3x3 matrix."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (3, 3):
        raise ValueError("cholesky3 expects a 3x3 matrix")
    if not np.allclose(matrix, matrix.T, atol=1e-12, rtol=0.0):
        raise ValueError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as err:
        raise ValueError("matrix is not positive definite") from err


def gen_synthetic(
    n: int, noise: NoiseKind, seed: int, role: Role = Role.TRAIN
) -> LabeledSet:
    """Draw n samples of the three-target regression problem.

    The feature is uniform on (-5, 5).  Base noises are N(10, 1),
    Exponential(1), Exponential(1); the correlated variant multiplies the
    stacked base draws (including the Gaussian's offset mean) by the lower
    Cholesky factor of ``NOISE_COV``, so target means shift as well as mix.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = rng_for(seed)
    u = rng.uniform(-5.0, 5.0, size=n)
    eps = np.column_stack(
        [
            rng.normal(10.0, 1.0, size=n),
            rng.exponential(1.0, size=n),
            rng.exponential(1.0, size=n),
        ]
    )
    if noise is NoiseKind.CORRELATED:
        eps = eps @ cholesky3(NOISE_COV).T
    return LabeledSet(features=u, targets=regression_mean(u) + eps, role=role)


@dataclass(frozen=True)
class FitConfig:
    """Subgradient-descent settings for the pinball fit."""

    epochs: int = 2000
    step: float = 0.5

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if not self.step > 0:
            raise ValueError("step must be positive")


@dataclass(frozen=True)
class QuantReg:
    """A fitted linear conditional-quantile model for one target."""

    weight: float
    bias: float
    level: float

    def predict(self, u: np.ndarray) -> np.ndarray:
        return self.weight * np.asarray(u, dtype=np.float64) + self.bias


def fit_quantreg(
    train: LabeledSet, k: int, level: float, hyper: FitConfig = FitConfig()
) -> QuantReg:
    """Fit a linear quantile model by full-batch pinball subgradient descent.

    Runs ``hyper.epochs`` full-batch steps with step size ``hyper.step``
    decayed by 1/sqrt(epoch) from a zero initialization and returns the mean
    of the final quarter of the iterates (subgradient iterates oscillate, the
    tail average does not).  The descent operates on standardized copies of
    the feature and target: a fixed step budget cannot traverse the raw
    target offsets, while on standardized data these settings keep the
    below-quantile fraction within a few 1e-3 of the level.  Coefficients are
    mapped back to the original units before returning.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("quantile level must lie in (0, 1)")
    u = train.features
    z = train.targets[:, k]
    u_mean, u_sd = float(u.mean()), float(u.std())
    z_mean, z_sd = float(z.mean()), float(z.std())
    u_sd = u_sd if u_sd > 1e-12 else 1.0
    z_sd = z_sd if z_sd > 1e-12 else 1.0
    us = (u - u_mean) / u_sd
    zs = (z - z_mean) / z_sd
    w = 0.0
    b = 0.0
    w_acc = 0.0
    b_acc = 0.0
    n_tail = max(1, hyper.epochs // 4)
    tail_start = hyper.epochs - n_tail + 1
    for epoch in range(1, hyper.epochs + 1):
        residual = zs - (w * us + b)
        coeff = level - (residual < 0.0)
        lr = hyper.step / math.sqrt(epoch)
        w += lr * float(np.mean(coeff * us))
        b += lr * float(np.mean(coeff))
        if epoch >= tail_start:
            w_acc += w
            b_acc += b
    w, b = w_acc / n_tail, b_acc / n_tail
    weight = z_sd * w / u_sd
    bias = z_mean + z_sd * (b - w * u_mean / u_sd)
    return QuantReg(weight=weight, bias=bias, level=level)


def fit_quantile_models(
    train: LabeledSet, alpha: float, hyper: FitConfig = FitConfig()
) -> list[tuple[QuantReg, QuantReg]]:
    """Fit the (alpha/2, 1 - alpha/2) model pair for every target."""
    pairs = []
    for k in range(train.n_targets):
        lo = fit_quantreg(train, k, alpha / 2.0, hyper)
        hi = fit_quantreg(train, k, 1.0 - alpha / 2.0, hyper)
        pairs.append((lo, hi))
    return pairs


def predict_quantiles(
    models: list[tuple[QuantReg, QuantReg]], data: LabeledSet
) -> LabeledSet:
    """Attach model quantile bands to a labeled set, repairing crossings.

    Where the two fitted lines cross, the band is repaired pointwise to
    (min, max) so every row satisfies lo <= hi.
    """
    if len(models) != data.n_targets:
        raise ValueError("need one model pair per target")
    lo = np.column_stack([pair[0].predict(data.features) for pair in models])
    hi = np.column_stack([pair[1].predict(data.features) for pair in models])
    return LabeledSet(
        features=data.features,
        targets=data.targets,
        role=data.role,
        lo=np.minimum(lo, hi),
        hi=np.maximum(lo, hi),
    )


@dataclass(frozen=True)
class RoundConfig:
    """Layout of a staged prediction process.

    ``rounds`` acquisition rounds, each predicting the same ``tasks`` latent
    truths with per-round prediction noise ``sigma`` (non-increasing) and a
    speed-up factor ``rates`` (strictly decreasing, final round rate is the
    baseline).  ``tau`` is the interval-length acceptance threshold used by
    the early-stopping protocol.
    """

    rounds: int = 5
    tasks: int = 1
    sigma: tuple[float, ...] = (0.4, 0.2, 0.1, 0.05, 0.02)
    rates: tuple[float, ...] = (16.0, 8.0, 4.0, 2.0, 1.0)
    tau: float = 0.1

    def __post_init__(self) -> None:
        if self.rounds < 1 or self.tasks < 1:
            raise ValueError("rounds and tasks must be positive")
        if len(self.sigma) != self.rounds or len(self.rates) != self.rounds:
            raise ValueError("sigma and rates need one entry per round")
        if any(s < 0 for s in self.sigma):
            raise ValueError("sigma entries must be non-negative")
        if any(b > a for a, b in zip(self.sigma, self.sigma[1:])):
            raise ValueError("sigma must be non-increasing across rounds")
        if any(b >= a for a, b in zip(self.rates, self.rates[1:])):
            raise ValueError("rates must be strictly decreasing across rounds")
        if any(r <= 0 for r in self.rates):
            raise ValueError("rates must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def n_targets(self) -> int:
        return self.rounds * self.tasks

    def target_index(self, round_idx: int, task: int) -> int:
        return round_idx * self.tasks + task


def gen_multiround(
    n: int,
    cfg: RoundConfig,
    seed: int,
    quantile_alpha: float = 0.1,
    n_pred: int = 32,
    role: Role = Role.TRAIN,
) -> LabeledSet:
    """Staged predictions of uniform latent truths with shrinking noise.

    Each of ``cfg.tasks`` latent truths is uniform on (0, 1) and repeats as
    the target in every round, so the full target matrix has
    ``rounds * tasks`` columns with column (b, l) holding truth l.  Round b
    predicts each truth with ``n_pred`` noisy samples (truth plus centered
    Gaussian noise of scale sigma[b], clipped to [0, 1]); the quantile band
    is the empirical (quantile_alpha / 2, 1 - quantile_alpha / 2) pair of
    those samples, so later rounds carry tighter bands.

    Latent truths and per-round noise use substreams keyed by task and round
    indices: a configuration with fewer tasks sees a prefix of the draws of a
    larger one under the same seed, which makes task-count sweeps comparable
    sample by sample.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if n_pred < 2:
        raise ValueError("need at least two prediction samples per round")
    truths = np.column_stack(
        [rng_for(seed, 0, l).uniform(0.0, 1.0, size=n) for l in range(cfg.tasks)]
    )
    lo_rank = _ceil_rank((quantile_alpha / 2.0) * n_pred)
    hi_rank = _ceil_rank((1.0 - quantile_alpha / 2.0) * n_pred)
    n_targets = cfg.n_targets
    lo = np.empty((n, n_targets))
    hi = np.empty((n, n_targets))
    targets = np.empty((n, n_targets))
    for b in range(cfg.rounds):
        for l in range(cfg.tasks):
            k = cfg.target_index(b, l)
            noise = rng_for(seed, 1, b, l).normal(0.0, 1.0, size=(n, n_pred))
            samples = np.clip(truths[:, [l]] + cfg.sigma[b] * noise, 0.0, 1.0)
            part = np.partition(samples, (lo_rank - 1, hi_rank - 1), axis=1)
            lo[:, k] = part[:, lo_rank - 1]
            hi[:, k] = part[:, hi_rank - 1]
            targets[:, k] = truths[:, l]
    return LabeledSet(features=np.zeros(n), targets=targets, role=role, lo=lo, hi=hi)
