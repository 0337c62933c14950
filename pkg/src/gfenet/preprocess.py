"""Placeholder imputation, z-scoring, class balancing and the stratified split."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import MarkerDataset

PLACEHOLDER = 0.0
STD_EPSILON = 1e-12
DEFAULT_TEST_FRACTION = 0.30


class TooFewSamples(ValueError):
    pass


class MissingClass(ValueError):
    pass


class InvalidFraction(ValueError):
    pass


@dataclass
class ImputationReport:
    replaced: list[int]
    all_placeholder: list[int]

    @property
    def total_replaced(self) -> int:
        return int(sum(self.replaced))


def impute_missing(frames) -> tuple[np.ndarray, ImputationReport]:
    """Replace exact 0.0 entries with the mean of the column's other entries.

    Accepts an ``(n, d)`` array or a :class:`MarkerDataset`; returns a new array.
    Columns that are entirely 0.0 are left alone and listed in the report.
    """
    x = np.array(frames.coords if isinstance(frames, MarkerDataset) else frames, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("need at least one frame")
    holes = x == PLACEHOLDER
    counts = holes.sum(axis=0)
    present = len(x) - counts
    sums = np.where(holes, 0.0, x).sum(axis=0)
    fill = np.divide(sums, present, out=np.zeros_like(sums), where=present > 0)
    dead = present == 0
    fixable = holes & ~dead
    x[fixable] = np.broadcast_to(fill, x.shape)[fixable]
    report = ImputationReport(
        replaced=np.where(dead, 0, counts).astype(int).tolist(),
        all_placeholder=np.flatnonzero(dead).tolist(),
    )
    return x, report


@dataclass(frozen=True)
class StandardizationStats:
    means: np.ndarray
    stds: np.ndarray

    @property
    def guarded_stds(self) -> np.ndarray:
        return np.where(self.stds < STD_EPSILON, 1.0, self.stds)

    @property
    def guarded_columns(self) -> list[int]:
        return np.flatnonzero(self.stds < STD_EPSILON).tolist()


def fit_standardizer(training_frames) -> StandardizationStats:
    x = np.asarray(training_frames, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise TooFewSamples(f"need >= 2 frames to fit, got {len(x) if x.ndim else 0}")
    return StandardizationStats(x.mean(axis=0), x.std(axis=0))


def apply_standardizer(stats: StandardizationStats, frames) -> np.ndarray:
    x = np.asarray(frames, dtype=np.float64)
    return (x - stats.means) / stats.guarded_stds


def balance_classes(dataset: MarkerDataset, seed) -> MarkerDataset:
    """Downsample every class to the minority count, then shuffle (both seeded)."""
    rng = np.random.default_rng(seed)
    classes = np.arange(dataset.n_classes)
    members = [np.flatnonzero(dataset.labels == c) for c in classes]
    empty = [int(c) for c, m in zip(classes, members) if len(m) == 0]
    if empty:
        raise MissingClass(f"classes without samples: {empty}")
    n_min = min(len(m) for m in members)
    keep = np.concatenate([np.sort(rng.choice(m, size=n_min, replace=False)) for m in members])
    return dataset.subset(keep[rng.permutation(len(keep))])


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def split_train_test(dataset: MarkerDataset, test_fraction: float = DEFAULT_TEST_FRACTION, seed=0):
    """Stratified split: class ``c`` puts ``round(count_c * test_fraction)`` samples in test."""
    if not 0 < test_fraction < 1:
        raise InvalidFraction(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == c)
        members = members[rng.permutation(len(members))]
        k = _round_half_up(len(members) * test_fraction)
        test_idx.append(members[:k])
        train_idx.append(members[k:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    train_idx = train_idx[rng.permutation(len(train_idx))]
    test_idx = test_idx[rng.permutation(len(test_idx))]
    return dataset.subset(train_idx), dataset.subset(test_idx)


@dataclass(frozen=True)
class PreprocessConfig:
    test_fraction: float = DEFAULT_TEST_FRACTION
    balance: bool = True
    # "before": balance then split (balanced test set); "after": split, balance train only
    balance_order: str = "before"
    # "train": fit z-score stats on the training split; "all": on the whole (balanced) set
    fit_stats_on: str = "train"

    def __post_init__(self):
        if self.balance_order not in ("before", "after"):
            raise ValueError(f"balance_order must be 'before' or 'after', got {self.balance_order!r}")
        if self.fit_stats_on not in ("train", "all"):
            raise ValueError(f"fit_stats_on must be 'train' or 'all', got {self.fit_stats_on!r}")
        if not 0 < self.test_fraction < 1:
            raise InvalidFraction(f"test_fraction must be in (0, 1), got {self.test_fraction}")


@dataclass
class PreparedSet:
    features: np.ndarray
    labels: np.ndarray
    stats: StandardizationStats
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite feature value")

    def __len__(self) -> int:
        return len(self.labels)


def prepare(dataset: MarkerDataset, config: PreprocessConfig, seeds: tuple[int, int]) -> tuple[PreparedSet, PreparedSet]:
    """impute -> balance -> split -> fit stats -> standardize. ``seeds`` = (balance, split)."""
    balance_seed, split_seed = seeds
    coords, imp = impute_missing(dataset)
    ds = dataset.with_coords(coords)
    n_in = len(ds)
    if config.balance and config.balance_order == "before":
        ds = balance_classes(ds, balance_seed)
    train, test = split_train_test(ds, config.test_fraction, split_seed)
    if config.balance and config.balance_order == "after":
        train = balance_classes(train, balance_seed)
    fit_on = train.coords if config.fit_stats_on == "train" else np.concatenate([train.coords, test.coords])
    stats = fit_standardizer(fit_on)
    provenance = {
        "source": dataset.name,
        "n_input": n_in,
        "imputed_values": imp.total_replaced,
        "imputed_per_column": imp.replaced,
        "all_placeholder_columns": imp.all_placeholder,
        "balanced": config.balance,
        "balance_order": config.balance_order,
        "balance_seed": balance_seed,
        "split_seed": split_seed,
        "test_fraction": config.test_fraction,
        "fit_stats_on": config.fit_stats_on,
        "guarded_columns": stats.guarded_columns,
        "train_class_counts": np.bincount(train.labels, minlength=ds.n_classes).tolist(),
        "test_class_counts": np.bincount(test.labels, minlength=ds.n_classes).tolist(),
    }
    return (
        PreparedSet(apply_standardizer(stats, train.coords), train.labels, stats, provenance),
        PreparedSet(apply_standardizer(stats, test.coords), test.labels, stats, provenance),
    )


def provenance_json(prepared: PreparedSet) -> str:
    doc = dict(prepared.provenance)
    doc["stats"] = {"means": prepared.stats.means.tolist(), "stds": prepared.stats.stds.tolist()}
    return json.dumps(doc, indent=2)

