import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gfenet.dataset import N_COORDS, MarkerClass, MarkerDataset
from gfenet.preprocess import (
    InvalidFraction,
    MissingClass,
    PreprocessConfig,
    TooFewSamples,
    apply_standardizer,
    balance_classes,
    fit_standardizer,
    impute_missing,
    prepare,
    split_train_test,
)


def _ds(n_pos, n_neg, seed=0):
    rng = np.random.default_rng(seed)
    n = n_pos + n_neg
    return MarkerDataset(
        MarkerClass.NEGATIVE, "a", np.arange(n, dtype=float), rng.normal(5, 2, (n, N_COORDS)), [1] * n_pos + [0] * n_neg
    )


def test_impute_column_mean():
    x, report = impute_missing(np.array([[1.0], [0.0], [3.0]]))
    assert x.ravel().tolist() == [1.0, 2.0, 3.0]
    assert report.replaced == [1] and report.total_replaced == 1


def test_impute_all_zero_column_flagged():
    x, report = impute_missing(np.array([[0.0, 1.0], [0.0, 2.0]]))
    assert x[:, 0].tolist() == [0.0, 0.0]
    assert report.all_placeholder == [0]


def test_impute_does_not_mutate_input():
    raw = np.array([[1.0], [0.0]])
    impute_missing(raw)
    assert raw[1, 0] == 0.0


@given(st.lists(st.floats(-100, 100, allow_nan=False).filter(lambda v: v != 0.0), min_size=1, max_size=20), st.data())
def test_impute_preserves_nonzero_mean(values, data):
    holes = data.draw(st.integers(0, 5))
    col = np.array(values + [0.0] * holes)[:, None]
    x, _ = impute_missing(col)
    assert not np.any(x == 0.0)
    assert math.isclose(x.mean(), np.mean(values), rel_tol=1e-9, abs_tol=1e-9)


def test_standardize_known_values():
    stats = fit_standardizer(np.array([[1.0], [2.0], [3.0]]))
    assert stats.means[0] == 2.0
    assert stats.stds[0] == pytest.approx(math.sqrt(2 / 3), abs=1e-5)
    z = apply_standardizer(stats, np.array([[1.0], [2.0], [3.0]])).ravel()
    assert z == pytest.approx([-1.22474, 0.0, 1.22474], abs=1e-5)


def test_constant_column_guarded():
    stats = fit_standardizer(np.full((4, 2), 7.0))
    assert stats.guarded_columns == [0, 1]
    assert np.all(apply_standardizer(stats, np.full((4, 2), 7.0)) == 0.0)


def test_fit_needs_two_frames():
    with pytest.raises(TooFewSamples):
        fit_standardizer(np.ones((1, 3)))


@given(st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_standardized_train_moments(n, seed):
    x = np.random.default_rng(seed).normal(10, 3, (n, 4))
    z = apply_standardizer(fit_standardizer(x), x)
    assert np.allclose(z.mean(0), 0.0, atol=1e-9)
    assert np.allclose(z.std(0), 1.0, atol=1e-9)


def test_balance_downsamples_majority():
    out = balance_classes(_ds(10, 30), seed=0)
    assert np.bincount(out.labels).tolist() == [10, 10]


def test_balance_missing_class():
    with pytest.raises(MissingClass):
        balance_classes(_ds(0, 5), seed=0)


@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 1000))
def test_balance_properties(p, n, seed):
    ds = _ds(p, n)
    out = balance_classes(ds, seed)
    assert np.bincount(out.labels, minlength=2).tolist() == [min(p, n)] * 2
    # selected frames are genuine, unduplicated rows
    ts = out.timestamps
    assert len(set(ts)) == len(ts)
    assert np.array_equal(out.coords, ds.coords[ts.astype(int)])
    assert out == balance_classes(ds, seed)


@pytest.mark.parametrize("n, expected_test", [(100, 30), (541, 162), (644, 193), (5, 2)])
def test_split_sizes(n, expected_test):
    train, test = split_train_test(_ds(n, n), 0.3, seed=0)
    assert np.bincount(test.labels).tolist() == [expected_test] * 2
    assert np.bincount(train.labels).tolist() == [n - expected_test] * 2


def test_split_balanced_541():
    train, test = split_train_test(_ds(541, 541), 0.3, seed=0)
    assert np.bincount(test.labels).tolist() == [162, 162]
    assert len(test) == 324


@pytest.mark.parametrize("f", [0.0, 1.0, -0.1, 1.5])
def test_split_invalid_fraction(f):
    with pytest.raises(InvalidFraction):
        split_train_test(_ds(5, 5), f)


@given(st.integers(1, 60), st.integers(1, 60), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_disjoint_and_complete(p, n, f, seed):
    ds = _ds(p, n)
    train, test = split_train_test(ds, f, seed)
    a, b = set(train.timestamps), set(test.timestamps)
    assert not a & b
    assert a | b == set(ds.timestamps)
    again = split_train_test(ds, f, seed)
    assert again[0] == train and again[1] == test


def test_prepare_uses_training_stats_only():
    train, test = prepare(_ds(60, 90), PreprocessConfig(), seeds=(1, 2))
    assert np.allclose(train.features.mean(0), 0.0, atol=1e-9)
    assert not np.allclose(test.features.mean(0), 0.0, atol=1e-3)
    assert train.provenance["train_class_counts"] == [42, 42]
    assert train.provenance["test_class_counts"] == [18, 18]


def test_prepare_balance_after_split():
    train, test = prepare(_ds(60, 90), PreprocessConfig(balance_order="after"), seeds=(1, 2))
    assert np.bincount(train.labels).tolist() == [42, 42]
    assert np.bincount(test.labels).tolist() == [27, 18]


def test_prepare_without_balance_and_all_stats():
    train, test = prepare(_ds(60, 90), PreprocessConfig(balance=False, fit_stats_on="all"), seeds=(1, 2))
    both = np.concatenate([train.features, test.features])
    assert np.allclose(both.mean(0), 0.0, atol=1e-9)
    assert len(train) + len(test) == 150


def test_prepare_records_imputation(mouth_dataset):
    train, test = prepare(mouth_dataset, PreprocessConfig(), seeds=(0, 0))
    assert train.provenance["imputed_values"] == int(np.sum(mouth_dataset.coords == 0.0))
    assert np.all(np.isfinite(train.features)) and np.all(np.isfinite(test.features))


def test_config_validation():
    with pytest.raises(ValueError):
        PreprocessConfig(balance_order="never")
    with pytest.raises(ValueError):
        PreprocessConfig(fit_stats_on="test")
