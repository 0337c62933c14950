import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gfenet.gradcheck import check_gradients, numeric_gradient, relative_error
from gfenet.optim import LossConfig, LossUndefined
from gfenet.structnet import (
    FC,
    STRUCTURED,
    InvalidOutputCount,
    ModelFormatError,
    NetworkParams,
    NonFiniteInput,
    backward,
    build_fc_spec,
    build_region_map,
    build_spec,
    build_structured_spec,
    densify,
    forward,
    model_from_json,
    model_to_dict,
    model_to_json,
    param_count,
    softmax,
    xavier_bounds,
    xavier_init,
)


def _random_params(spec, rng, scale=0.3):
    return NetworkParams(
        [rng.normal(0, scale, spec.n_edges(l)) for l in range(spec.n_layers)],
        [rng.normal(0, scale, spec.layer_sizes[l + 1]) for l in range(spec.n_layers)],
    )


def _dense_forward(mats, biases, x):
    a = x
    for w, b in zip(mats[:-1], biases[:-1]):
        a = np.tanh(a @ w.T + b)
    z = a @ mats[-1].T + biases[-1]
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# -- topology ---------------------------------------------------------------


def test_region_map():
    rm = build_region_map()
    assert (rm[0], rm[48], rm[99]) == (0, 5, 9)
    assert np.all(rm >= 0)


def test_h1_and_h2_edges():
    spec = build_structured_spec(2)
    assert spec.in_edges[0][7].tolist() == [21, 22, 23]
    assert spec.in_edges[1][5].tolist() == list(range(48, 68))
    assert all(len(e) == 3 for e in spec.in_edges[0])


def test_h1_neurons_cover_inputs_exactly_once():
    spec = build_structured_spec(2)
    assert sorted(np.concatenate(spec.in_edges[0]).tolist()) == list(range(300))
    assert sorted(np.concatenate(spec.in_edges[1]).tolist()) == list(range(100))


def test_output_layer_fully_connected():
    spec = build_structured_spec(9)
    assert spec.layer_sizes[-1] == 9
    assert all(e.tolist() == list(range(10)) for e in spec.in_edges[2])


@pytest.mark.parametrize("preset, k, expected", [(STRUCTURED, 2, 532), (STRUCTURED, 9, 609), (FC, 2, 31132)])
def test_param_counts(preset, k, expected):
    assert param_count(build_spec(preset, k)) == expected


@pytest.mark.parametrize("k", [1, 10, 0, -3, 2.5])
def test_invalid_output_count(k):
    with pytest.raises(InvalidOutputCount):
        build_structured_spec(k)


def test_structured_mask_subset_of_fc():
    s, f = build_structured_spec(3), build_fc_spec(3)
    for l in range(3):
        ms, mf = s.dense_mask(l), f.dense_mask(l)
        assert not np.any(ms & ~mf)
        assert mf.all()


# -- initialization ---------------------------------------------------------


def test_xavier_bounds_h1():
    bounds = xavier_bounds(build_structured_spec(2))
    assert np.allclose(bounds[0], math.sqrt(6 / 4))
    # H2 mouth neuron: 20 inputs, 2 outputs
    spec = build_structured_spec(2)
    ip = spec.csr[1][0]
    assert np.allclose(bounds[1][ip[5] : ip[6]], math.sqrt(6 / 22))
    # output neuron: 10 inputs, fan_out taken as 1
    assert np.allclose(bounds[2], math.sqrt(6 / 11))


def test_xavier_dense_fans():
    bounds = xavier_bounds(build_structured_spec(2), fans="dense")
    assert np.allclose(bounds[0], math.sqrt(6 / 400))


@given(st.integers(0, 2**31 - 1), st.sampled_from([STRUCTURED, FC]))
def test_xavier_within_bounds(seed, preset):
    spec = build_spec(preset, 2)
    params = xavier_init(spec, seed)
    for w, b in zip(params.weights, xavier_bounds(spec)):
        assert np.all(np.abs(w) <= b)
    assert all(np.all(b == 0) for b in params.biases)
    params.check(spec)


def test_xavier_deterministic():
    spec = build_structured_spec(2)
    assert xavier_init(spec, 5) == xavier_init(spec, 5)
    assert xavier_init(spec, 5) != xavier_init(spec, 6)


# -- forward ----------------------------------------------------------------


def test_zero_params_uniform_output():
    spec = build_structured_spec(2)
    zero = NetworkParams([np.zeros(spec.n_edges(l)) for l in range(3)], [np.zeros(s) for s in spec.layer_sizes[1:]])
    _, p = forward(spec, zero, np.zeros(300))
    assert p.shape == (2,)
    assert p.tolist() == [0.5, 0.5]


@pytest.mark.parametrize("preset, k", [(STRUCTURED, 2), (STRUCTURED, 9), (FC, 3)])
def test_forward_matches_dense_oracle(preset, k, rng):
    spec = build_spec(preset, k)
    params = _random_params(spec, rng)
    x = rng.normal(size=(6, 300))
    _, p = forward(spec, params, x)
    expected = _dense_forward(densify(spec, params), params.biases, x)
    assert np.max(np.abs(p - expected)) < 1e-12


def test_forward_ignores_masked_positions(rng):
    # the dense oracle built from the full FC matrix with masked entries zeroed gives the same answer
    s = build_structured_spec(2)
    params = _random_params(s, rng)
    mats = [rng.normal(size=m.shape) for m in densify(s, params)]
    for l, m in enumerate(mats):
        m[~s.dense_mask(l)] = 0.0
        m[s.dense_mask(l)] = params.weights[l]
    x = rng.normal(size=(3, 300))
    assert np.max(np.abs(forward(s, params, x)[1] - _dense_forward(mats, params.biases, x))) < 1e-12


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=9), st.floats(-100, 100))
def test_softmax_shift_invariance(z, c):
    z = np.array(z)
    assert np.max(np.abs(softmax(z) - softmax(z + c))) < 1e-12
    assert math.isclose(softmax(z).sum(), 1.0, abs_tol=1e-12)


def test_softmax_extreme_logits():
    p = softmax(np.array([1000.0, -1000.0]))
    assert np.all(np.isfinite(p)) and p[0] == 1.0


def test_hidden_activations_bounded(rng):
    spec = build_structured_spec(2)
    params = _random_params(spec, rng, scale=3.0)
    trace, probs = forward(spec, params, rng.normal(0, 10, (5, 300)))
    for a in trace.activations[1:]:
        assert np.all(np.abs(a) <= 1.0)
    assert np.allclose(probs.sum(axis=1), 1.0)


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_non_finite_input(bad):
    spec = build_structured_spec(2)
    x = np.zeros(300)
    x[17] = bad
    with pytest.raises(NonFiniteInput):
        forward(spec, xavier_init(spec, 0), x)


def test_wrong_input_width():
    spec = build_structured_spec(2)
    with pytest.raises(ValueError):
        forward(spec, xavier_init(spec, 0), np.zeros(299))


# -- backward ---------------------------------------------------------------


def test_unknown_loss_kind(rng):
    spec = build_structured_spec(2)
    trace, _ = forward(spec, xavier_init(spec, 0), rng.normal(size=(2, 300)))
    with pytest.raises(LossUndefined):
        backward(spec, xavier_init(spec, 0), trace, [0, 1], "hinge")
    with pytest.raises(LossUndefined):
        LossConfig("hinge")


def test_l2_gradient_is_two_beta_w(rng):
    spec = build_structured_spec(2)
    params = _random_params(spec, rng)
    trace, _ = forward(spec, params, rng.normal(size=(4, 300)))
    y = [0, 1, 1, 0]
    plain = backward(spec, params, trace, y, LossConfig("ce", 0.0))
    reg = backward(spec, params, trace, y, LossConfig("ce", 0.05))
    for l in range(3):
        assert np.allclose(reg.weights[l] - plain.weights[l], 0.1 * params.weights[l], atol=1e-15)
        assert np.array_equal(reg.biases[l], plain.biases[l])


@pytest.mark.parametrize("kind", ["ce", "mse"])
@pytest.mark.parametrize("k", [2, 9])
def test_gradcheck_structured(kind, k, rng):
    spec = build_structured_spec(k)
    params = _random_params(spec, rng)
    res = check_gradients(spec, params, rng.normal(size=(3, 300)), rng.integers(0, k, 3), LossConfig(kind, 0.05))
    assert res.max_rel_error < 1e-6
    assert res.max_abs_error < 1e-8


def test_gradcheck_detects_corruption(rng):
    spec = build_structured_spec(2)
    params = _random_params(spec, rng)
    res = check_gradients(spec, params, rng.normal(size=(3, 300)), [0, 1, 0], LossConfig(), corrupt=True)
    assert not res.ok


def test_relative_error_scale_free():
    a = np.array([1.0, 2.0])
    assert relative_error(a, a) == 0.0
    assert relative_error(np.zeros(2), np.zeros(2)) == 0.0
    assert relative_error(1e6 * a, 1e6 * a * (1 + 1e-9)) < 1e-8


def test_numeric_gradient_shapes(rng):
    spec = build_structured_spec(2)
    g = numeric_gradient(spec, _random_params(spec, rng), rng.normal(size=(1, 300)), [1], LossConfig())
    g.check(spec)


# -- serialization ----------------------------------------------------------


@pytest.mark.parametrize("preset, k", [(STRUCTURED, 2), (STRUCTURED, 5), (FC, 2)])
def test_model_json_round_trip(preset, k, rng):
    spec = build_spec(preset, k)
    params = _random_params(spec, rng)
    spec2, params2 = model_from_json(model_to_json(spec, params, seed=11))
    assert params2 == params
    assert spec2.layer_sizes == spec.layer_sizes
    x = rng.normal(size=(2, 300))
    assert np.array_equal(forward(spec, params, x)[1], forward(spec2, params2, x)[1])


def test_model_json_records_topology(rng):
    spec = build_structured_spec(2)
    doc = json.loads(model_to_json(spec, xavier_init(spec, 3), seed=3))
    assert doc["param_count"] == 532 and doc["seed"] == 3
    assert doc["layers"][0]["in_edges"][7] == [21, 22, 23]
    assert len(doc["layers"][1]["weights"][5]) == 20


def test_model_json_rejects_tampering(rng):
    spec = build_structured_spec(2)
    doc = model_to_dict(spec, xavier_init(spec, 0))
    bad = json.loads(json.dumps(doc))
    bad["layers"][0]["in_edges"][0] = [0, 1, 5]
    with pytest.raises(ModelFormatError):
        model_from_json(json.dumps(bad))
    bad = json.loads(json.dumps(doc))
    bad["layers"][1]["weights"][0].append(0.0)
    with pytest.raises(ModelFormatError):
        model_from_json(json.dumps(bad))
    bad = json.loads(json.dumps(doc))
    bad["format"] = "other"
    with pytest.raises(ModelFormatError):
        model_from_json(json.dumps(bad))
    bad = json.loads(json.dumps(doc))
    bad["param_count"] = 533
    with pytest.raises(ModelFormatError):
        model_from_json(json.dumps(bad))
