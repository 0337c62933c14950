"""Masked feed-forward network: topology presets, Xavier init, forward and backprop.

Weights are stored edge-compact. Layer ``l`` keeps, for every neuron, the
sorted list of source indices it reads; the flat weight vector holds those
edges neuron by neuron, which is exactly CSR order. A masked edge therefore
has no storage and can never receive a gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from .dataset import N_COORDS, N_POINTS, REGIONS
from .optim import LOSS_KINDS, LossConfig, LossUndefined, compute_loss, output_delta

STRUCTURED = "structured"
FC = "fc"
PRESETS = (STRUCTURED, FC)
HIDDEN = (N_POINTS, len(REGIONS))
MIN_OUTPUTS, MAX_OUTPUTS = 2, 9
MODEL_FORMAT = "gfenet-model"
MODEL_VERSION = 1


class InvalidOutputCount(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


def build_region_map() -> np.ndarray:
    """Region index for each of the 100 attribute points."""
    out = np.full(N_POINTS, -1, dtype=np.int64)
    for r, (_, lo, hi) in enumerate(REGIONS):
        out[lo : hi + 1] = r
    return out


@dataclass(frozen=True, eq=False)
class ConnectivitySpec:
    preset: str
    layer_sizes: tuple[int, ...]
    # in_edges[l][j]: sorted source indices (in layer l) read by neuron j of layer l + 1
    in_edges: tuple[tuple[np.ndarray, ...], ...]

    def __post_init__(self):
        if len(self.in_edges) != len(self.layer_sizes) - 1:
            raise ValueError("one edge table per non-input layer")
        for l, table in enumerate(self.in_edges):
            if len(table) != self.layer_sizes[l + 1]:
                raise ValueError(f"layer {l + 1}: {len(table)} neurons, expected {self.layer_sizes[l + 1]}")
            for src in table:
                if len(src) == 0:
                    raise ValueError(f"layer {l + 1}: neuron with no inputs")
                if np.any(np.diff(src) <= 0) or src[0] < 0 or src[-1] >= self.layer_sizes[l]:
                    raise ValueError(f"layer {l + 1}: edge list must be sorted, unique, in range")
                src.setflags(write=False)

    @property
    def n_layers(self) -> int:
        return len(self.in_edges)

    @property
    def num_outputs(self) -> int:
        return self.layer_sizes[-1]

    @cached_property
    def csr(self) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
        """Per layer ``(indptr, indices)``."""
        out = []
        for table in self.in_edges:
            indptr = np.concatenate([[0], np.cumsum([len(s) for s in table])]).astype(np.int64)
            out.append((indptr, np.concatenate(table).astype(np.int64)))
        return tuple(out)

    @cached_property
    def edge_dst(self) -> tuple[np.ndarray, ...]:
        return tuple(np.repeat(np.arange(len(ip) - 1), np.diff(ip)) for ip, _ in self.csr)

    @cached_property
    def full_layers(self) -> tuple[bool, ...]:
        # sorted unique edge lists: a full edge count means every source is read
        return tuple(
            self.n_edges(l) == self.layer_sizes[l] * self.layer_sizes[l + 1] for l in range(self.n_layers)
        )

    def n_edges(self, layer: int) -> int:
        return int(self.csr[layer][0][-1])

    def out_degree(self, layer: int) -> np.ndarray:
        """Out-edge count of each neuron in (non-input) layer ``layer + 1``; the output layer gets 1."""
        size = self.layer_sizes[layer + 1]
        if layer + 1 == self.n_layers:
            return np.ones(size, dtype=np.int64)
        return np.bincount(self.csr[layer + 1][1], minlength=size)

    def dense_mask(self, layer: int) -> np.ndarray:
        mask = np.zeros((self.layer_sizes[layer + 1], self.layer_sizes[layer]), dtype=bool)
        mask[self.edge_dst[layer], self.csr[layer][1]] = True
        return mask


def _check_outputs(num_outputs: int):
    if not (isinstance(num_outputs, (int, np.integer)) and MIN_OUTPUTS <= num_outputs <= MAX_OUTPUTS):
        raise InvalidOutputCount(f"num_outputs must be in {MIN_OUTPUTS}..{MAX_OUTPUTS}, got {num_outputs!r}")


def build_structured_spec(num_outputs: int) -> ConnectivitySpec:
    _check_outputs(num_outputs)
    h1 = tuple(np.arange(3 * n, 3 * n + 3) for n in range(N_POINTS))
    h2 = tuple(np.arange(lo, hi + 1) for _, lo, hi in REGIONS)
    out = tuple(np.arange(len(REGIONS)) for _ in range(num_outputs))
    return ConnectivitySpec(STRUCTURED, (N_COORDS, *HIDDEN, num_outputs), (h1, h2, out))


def build_fc_spec(num_outputs: int) -> ConnectivitySpec:
    _check_outputs(num_outputs)
    sizes = (N_COORDS, *HIDDEN, num_outputs)
    tables = tuple(tuple(np.arange(sizes[l]) for _ in range(sizes[l + 1])) for l in range(len(sizes) - 1))
    return ConnectivitySpec(FC, sizes, tables)


def build_spec(preset: str, num_outputs: int) -> ConnectivitySpec:
    if preset == STRUCTURED:
        return build_structured_spec(num_outputs)
    if preset == FC:
        return build_fc_spec(num_outputs)
    raise ValueError(f"unknown preset {preset!r}")


def param_count(spec: ConnectivitySpec) -> int:
    return sum(spec.n_edges(l) + spec.layer_sizes[l + 1] for l in range(spec.n_layers))


@dataclass(eq=False)
class NetworkParams:
    """Flat per-layer weight vectors (CSR order) and per-neuron biases."""

    weights: list
    biases: list

    def arrays(self) -> list:
        return [*self.weights, *self.biases]

    def from_arrays(self, arrays) -> "NetworkParams":
        n = len(self.weights)
        return NetworkParams(list(arrays[:n]), list(arrays[n:]))

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def neuron_weights(self, spec: ConnectivitySpec, layer: int, neuron: int) -> np.ndarray:
        indptr = spec.csr[layer][0]
        return self.weights[layer][indptr[neuron] : indptr[neuron + 1]]

    def check(self, spec: ConnectivitySpec):
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise ValueError("layer count mismatch")
        for l in range(spec.n_layers):
            if self.weights[l].shape != (spec.n_edges(l),):
                raise ValueError(f"layer {l + 1}: {self.weights[l].shape[0]} weights for {spec.n_edges(l)} edges")
            if self.biases[l].shape != (spec.layer_sizes[l + 1],):
                raise ValueError(f"layer {l + 1}: wrong bias count")

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkParams):
            return NotImplemented
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def xavier_bounds(spec: ConnectivitySpec, fans: str = "mask") -> list[np.ndarray]:
    """Per-edge uniform bound ``sqrt(6 / (fan_in + fan_out))``.

    ``fans="mask"`` uses each destination neuron's in- and out-edge counts;
    ``fans="dense"`` uses the dense layer widths.
    """
    bounds = []
    for l in range(spec.n_layers):
        indptr, _ = spec.csr[l]
        if fans == "mask":
            fan_in = np.diff(indptr)
            fan_out = spec.out_degree(l)
            per_neuron = np.sqrt(6.0 / (fan_in + fan_out))
            bounds.append(per_neuron[spec.edge_dst[l]])
        elif fans == "dense":
            b = np.sqrt(6.0 / (spec.layer_sizes[l] + spec.layer_sizes[l + 1]))
            bounds.append(np.full(spec.n_edges(l), b))
        else:
            raise ValueError(f"unknown fan mode {fans!r}")
    return bounds


def xavier_init(spec: ConnectivitySpec, seed: int, fans: str = "mask") -> NetworkParams:
    rng = np.random.default_rng(seed)
    weights = [rng.uniform(-1.0, 1.0, size=len(b)) * b for b in xavier_bounds(spec, fans)]
    biases = [np.zeros(spec.layer_sizes[l + 1]) for l in range(spec.n_layers)]
    return NetworkParams(weights, biases)


def layer_matrix(spec: ConnectivitySpec, params: NetworkParams, layer: int):
    """Weights of ``layer`` as a linear operator: sparse CSR, or a reshaped view when the layer is full."""
    shape = (spec.layer_sizes[layer + 1], spec.layer_sizes[layer])
    if spec.full_layers[layer]:
        # CSR order of a full layer is row-major dense order
        return params.weights[layer].reshape(shape)
    indptr, indices = spec.csr[layer]
    return sparse.csr_matrix((params.weights[layer], indices, indptr), shape=shape)


def densify(spec: ConnectivitySpec, params: NetworkParams) -> list[np.ndarray]:
    """Dense ``(out, in)`` weight matrices with exact zeros on masked edges."""
    out = []
    for l in range(spec.n_layers):
        m = layer_matrix(spec, params, l)
        out.append(m.copy() if isinstance(m, np.ndarray) else m.toarray())
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardTrace:
    # activations[0] is the input; activations[l] is the tanh output of hidden layer l
    activations: list = field(default_factory=list)
    pre_activations: list = field(default_factory=list)
    probs: np.ndarray | None = None

    @property
    def logits(self) -> np.ndarray:
        return self.pre_activations[-1]


def forward(spec: ConnectivitySpec, params: NetworkParams, x) -> tuple[ForwardTrace, np.ndarray]:
    """Forward pass for one input (300,) or a batch (n, 300)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = np.atleast_2d(x)
    if a.shape[1] != spec.layer_sizes[0]:
        raise ValueError(f"expected {spec.layer_sizes[0]} inputs, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput("input contains NaN or Inf")
    trace = ForwardTrace(activations=[a])
    for l in range(spec.n_layers):
        z = np.asarray((layer_matrix(spec, params, l) @ a.T).T) + params.biases[l]
        trace.pre_activations.append(z)
        if l < spec.n_layers - 1:
            a = np.tanh(z)
            trace.activations.append(a)
    trace.probs = softmax(trace.pre_activations[-1])
    return trace, (trace.probs[0] if single else trace.probs)


def predict_proba(spec: ConnectivitySpec, params: NetworkParams, x) -> np.ndarray:
    return forward(spec, params, x)[1]


def backward(spec: ConnectivitySpec, params: NetworkParams, trace: ForwardTrace, targets, loss) -> NetworkParams:
    """Gradient of the batch-mean loss (plus L2 penalty) w.r.t. every stored parameter.

    ``loss`` is a :class:`LossConfig` or a loss-kind string (no penalty).
    """
    if isinstance(loss, str):
        if loss not in LOSS_KINDS:
            raise LossUndefined(f"unknown loss kind {loss!r}")
        loss = LossConfig(loss, 0.0)
    n = trace.probs.shape[0]
    delta = output_delta(trace.probs, targets, loss.kind) / n
    gw = [None] * spec.n_layers
    gb = [None] * spec.n_layers
    for l in reversed(range(spec.n_layers)):
        a_in = trace.activations[l]
        dst, src = spec.edge_dst[l], spec.csr[l][1]
        if spec.full_layers[l]:
            gw[l] = (delta.T @ a_in).ravel()
        else:
            gw[l] = np.einsum("ne,ne->e", delta[:, dst], a_in[:, src])
        if loss.reg_beta:
            gw[l] += 2.0 * loss.reg_beta * params.weights[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            back = np.asarray((layer_matrix(spec, params, l).T @ delta.T).T)
            delta = back * (1.0 - a_in * a_in)
    return NetworkParams(gw, gb)


def loss_and_grad(spec, params, x, targets, loss: LossConfig) -> tuple[float, NetworkParams]:
    trace, probs = forward(spec, params, np.atleast_2d(x))
    return compute_loss(probs, targets, params, loss), backward(spec, params, trace, targets, loss)


# -- serialization ----------------------------------------------------------


def model_to_dict(spec: ConnectivitySpec, params: NetworkParams, seed: int | None = None) -> dict:
    layers = []
    for l in range(spec.n_layers):
        layers.append(
            {
                "in_edges": [s.tolist() for s in spec.in_edges[l]],
                "weights": [params.neuron_weights(spec, l, j).tolist() for j in range(spec.layer_sizes[l + 1])],
                "biases": params.biases[l].tolist(),
            }
        )
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "preset": spec.preset,
        "layer_sizes": list(spec.layer_sizes),
        "seed": seed,
        "param_count": param_count(spec),
        "layers": layers,
    }


def model_to_json(spec: ConnectivitySpec, params: NetworkParams, seed: int | None = None) -> str:
    return json.dumps(model_to_dict(spec, params, seed), separators=(",", ":")) + "\n"


def model_from_dict(doc: dict) -> tuple[ConnectivitySpec, NetworkParams]:
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model document {doc.get('format')!r} v{doc.get('version')!r}")
    sizes = tuple(int(s) for s in doc["layer_sizes"])
    tables, weights, biases = [], [], []
    for l, layer in enumerate(doc["layers"]):
        edges = tuple(np.asarray(e, dtype=np.int64) for e in layer["in_edges"])
        if any(len(w) != len(e) for w, e in zip(layer["weights"], edges)) or len(layer["weights"]) != len(edges):
            raise ModelFormatError(f"layer {l + 1}: weights do not match edge lists")
        tables.append(edges)
        weights.append(np.asarray([v for w in layer["weights"] for v in w], dtype=np.float64))
        biases.append(np.asarray(layer["biases"], dtype=np.float64))
    try:
        spec = ConnectivitySpec(doc["preset"], sizes, tuple(tables))
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None
    if doc["preset"] in PRESETS:
        ref = build_spec(doc["preset"], sizes[-1])
        if ref.layer_sizes != sizes or any(
            not np.array_equal(a, b) for ta, tb in zip(ref.in_edges, spec.in_edges) for a, b in zip(ta, tb)
        ):
            raise ModelFormatError(f"edge lists do not match the {doc['preset']!r} preset")
    if "param_count" in doc and doc["param_count"] != param_count(spec):
        raise ModelFormatError(f"param_count {doc['param_count']} != {param_count(spec)}")
    params = NetworkParams(weights, biases)
    try:
        params.check(spec)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None
    return spec, params


def model_from_json(text: str) -> tuple[ConnectivitySpec, NetworkParams]:
    return model_from_dict(json.loads(text))
