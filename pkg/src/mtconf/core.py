"""Shared dataset containers, deterministic seeding, and split bookkeeping.

Everything downstream (scoring, calibration, the experiment harness) works on
the small set of containers defined here.  All containers are immutable after
construction; the numpy arrays they hold are marked read-only so a stray
in-place edit fails loudly instead of corrupting a shared split.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class InsufficientSamplesError(ValueError):
    """Raised when a requested split needs more samples than are available."""


class Role(str, Enum):
    """What a labeled set is used for in the pipeline."""

    TRAIN = "train"
    TUNE = "tune"
    CAL = "cal"
    TEST = "test"


# Stream tags keep the fixed tune/cal/test draw and the per-trial re-splits on
# disjoint branches of the seed tree.
_PARTITION_STREAM = 0
_TRIAL_STREAM = 1


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Derive an independent generator from a root seed and an integer path.

    Uses the SeedSequence spawn-key mechanism, so streams for different paths
    are statistically independent and the derivation is order-free: stream
    (seed, 3) is the same whether or not (seed, 2) was ever created.  That is
    what makes parallel trials reproducible.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(path)))


def derive_seed(seed: int, *path: int) -> int:
    """Collapse (seed, path) to a plain integer seed for APIs that want one."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(path))
    return int(ss.generate_state(1, np.uint64)[0])


def trial_rng(spec: "SplitSpec", trial: int) -> np.random.Generator:
    """Generator for one Monte Carlo trial, independent across trial indices."""
    return rng_for(spec.seed, _TRIAL_STREAM, trial)


@dataclass(frozen=True)
class QuantileRow:
    """Per-sample lower/upper quantile estimates for each of K targets."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("quantile row needs matching 1-d lo/hi arrays")
        if lo.size < 1:
            raise ValueError("quantile row needs at least one target")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("quantile estimates must be finite")
        if np.any(lo > hi):
            raise ValueError("lower quantile exceeds upper; repair crossings first")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def n_targets(self) -> int:
        return self.lo.size


@dataclass(frozen=True)
class IntervalSet:
    """One prediction interval per target.

    Endpoints may be infinite (uninformative side).  An inverted pair
    (lo > hi) encodes the empty interval; ``contains`` is then false for
    every value and ``lengths`` clamps to zero.
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("interval set needs matching 1-d lo/hi arrays")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def n_targets(self) -> int:
        return self.lo.size

    def contains(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        return (self.lo <= values) & (values <= self.hi)

    def lengths(self) -> np.ndarray:
        return np.maximum(0.0, self.hi - self.lo)


@dataclass(frozen=True)
class LabeledSet:
    """A feature/target sample with optional per-target quantile estimates.

    ``features`` is (n,), ``targets`` is (n, K).  ``lo``/``hi`` are (n, K)
    once a quantile model has been applied, ``None`` before that.
    """

    features: np.ndarray
    targets: np.ndarray
    role: Role
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        if targets.ndim == 1:
            targets = targets[:, None]
        if feats.ndim != 1 or targets.ndim != 2 or targets.shape[0] != feats.shape[0]:
            raise ValueError("features must be (n,) and targets (n, K)")
        if targets.shape[1] < 1:
            raise ValueError("need at least one target")
        if not np.all(np.isfinite(targets)):
            raise ValueError("targets must be finite")
        arrays = {"features": feats, "targets": targets}
        if (self.lo is None) != (self.hi is None):
            raise ValueError("provide both quantile sides or neither")
        if self.lo is not None:
            lo = np.asarray(self.lo, dtype=np.float64)
            hi = np.asarray(self.hi, dtype=np.float64)
            if lo.shape != targets.shape or hi.shape != targets.shape:
                raise ValueError("quantile arrays must match targets shape")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("quantile estimates must be finite")
            if np.any(lo > hi):
                raise ValueError("crossed quantile rows; repair before constructing")
            arrays["lo"] = lo
            arrays["hi"] = hi
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_targets(self) -> int:
        return self.targets.shape[1]

    @property
    def has_quantiles(self) -> bool:
        return self.lo is not None

    def quantile_row(self, i: int) -> QuantileRow:
        if self.lo is None:
            raise ValueError("no quantile estimates attached to this set")
        return QuantileRow(lo=self.lo[i], hi=self.hi[i])

    def subset(self, indices: np.ndarray, role: Role) -> "LabeledSet":
        indices = np.asarray(indices)
        return LabeledSet(
            features=self.features[indices],
            targets=self.targets[indices],
            role=role,
            lo=None if self.lo is None else self.lo[indices],
            hi=None if self.hi is None else self.hi[indices],
        )


def concat(sets: Sequence[LabeledSet], role: Role) -> LabeledSet:
    """Stack labeled sets that agree on K and on quantile availability."""
    if not sets:
        raise ValueError("nothing to concatenate")
    with_q = [s.has_quantiles for s in sets]
    if any(with_q) != all(with_q):
        raise ValueError("cannot mix sets with and without quantile estimates")
    return LabeledSet(
        features=np.concatenate([s.features for s in sets]),
        targets=np.concatenate([s.targets for s in sets]),
        role=role,
        lo=np.concatenate([s.lo for s in sets]) if all(with_q) else None,
        hi=np.concatenate([s.hi for s in sets]) if all(with_q) else None,
    )


@dataclass(frozen=True)
class SplitSpec:
    """Sizes and seed for the tune/calibration/test partition."""

    seed: int
    n_tune: int
    n_cal: int
    n_test: int

    def __post_init__(self) -> None:
        for name in ("n_tune", "n_cal", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")

    @property
    def total(self) -> int:
        return self.n_tune + self.n_cal + self.n_test


def partition(data: LabeledSet, spec: SplitSpec) -> tuple[LabeledSet, LabeledSet, LabeledSet]:
    """Disjoint tune/cal/test subsets drawn without replacement.

    The draw depends only on ``spec.seed`` and ``data.n``, so repeating the
    call reproduces the same index sets.  Raises InsufficientSamplesError when
    the requested sizes exceed the available samples.
    """
    if spec.total > data.n:
        raise InsufficientSamplesError(
            f"need {spec.total} samples for the requested split, have {data.n}"
        )
    perm = rng_for(spec.seed, _PARTITION_STREAM).permutation(data.n)
    a, b = spec.n_tune, spec.n_tune + spec.n_cal
    tune = data.subset(perm[:a], Role.TUNE)
    cal = data.subset(perm[a:b], Role.CAL)
    test = data.subset(perm[b : b + spec.n_test], Role.TEST)
    return tune, cal, test


def split_cal_test(data: LabeledSet, n_cal: int, n_test: int, rng: np.random.Generator) -> tuple[LabeledSet, LabeledSet]:
    """One random calibration/test re-split of a pooled labeled set."""
    if n_cal + n_test > data.n:
        raise InsufficientSamplesError(
            f"need {n_cal + n_test} samples for the requested split, have {data.n}"
        )
    perm = rng.permutation(data.n)
    cal = data.subset(perm[:n_cal], Role.CAL)
    test = data.subset(perm[n_cal : n_cal + n_test], Role.TEST)
    return cal, test
