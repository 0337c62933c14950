"""Central finite-difference check of the hand-derived gradients.

The oracle evaluates the loss through its own dense forward pass (masked
positions held at zero), so it shares no code with the sparse path in
``structnet.forward`` / ``structnet.backward``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import PROB_FLOOR, LossConfig, one_hot
from .structnet import ConnectivitySpec, NetworkParams, backward, build_fc_spec, build_structured_spec, forward, xavier_init

STEP = 1e-5
TOLERANCE = 1e-6


def _dense_loss(mats, biases, x, y, loss: LossConfig) -> float:
    # y is one-hot
    a = x
    last = len(mats) - 1
    for l in range(last):
        a = np.tanh(a @ mats[l].T + biases[l])
    z = a @ mats[last].T + biases[last]
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    if loss.kind == "mse":
        data = np.mean((p - y) ** 2)
    else:
        data = -np.sum(y * np.log(np.maximum(p, PROB_FLOOR))) / len(y)
    reg = loss.reg_beta * sum(np.vdot(w, w) for w in mats) if loss.reg_beta else 0.0
    return float(data + reg)


def numeric_gradient(spec: ConnectivitySpec, params: NetworkParams, x, targets, loss: LossConfig, h: float = STEP):
    """Finite-difference gradient of every stored parameter, shaped like ``params``."""
    mats = []
    for l in range(spec.n_layers):
        m = np.zeros((spec.layer_sizes[l + 1], spec.layer_sizes[l]))
        for j, src in enumerate(spec.in_edges[l]):
            m[j, src] = params.neuron_weights(spec, l, j)
        mats.append(m)
    biases = [b.copy() for b in params.biases]
    y = one_hot(targets, spec.num_outputs)

    def central(arr, idx):
        old = arr[idx]
        arr[idx] = old + h
        up = _dense_loss(mats, biases, x, y, loss)
        arr[idx] = old - h
        down = _dense_loss(mats, biases, x, y, loss)
        arr[idx] = old
        return (up - down) / (2 * h)

    gw, gb = [], []
    for l in range(spec.n_layers):
        g = np.empty(spec.n_edges(l))
        e = 0
        for j, src in enumerate(spec.in_edges[l]):
            for s in src:
                g[e] = central(mats[l], (j, s))
                e += 1
        gw.append(g)
        gb.append(np.array([central(biases[l], j) for j in range(len(biases[l]))]))
    return NetworkParams(gw, gb)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both are zero."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if scale == 0 else float(np.linalg.norm(analytic - numeric) / scale)


@dataclass
class CheckResult:
    name: str
    loss: str
    n_params: int
    max_rel_error: float
    max_abs_error: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE


def check_gradients(spec, params, x, targets, loss: LossConfig, name: str = "", corrupt: bool = False) -> CheckResult:
    """Compare ``backward`` to finite differences over every parameter array.

    The reported relative error is the worst over the per-layer weight and
    bias vectors. ``corrupt`` perturbs one analytic entry (negative control).
    """
    trace, _ = forward(spec, params, x)
    analytic = backward(spec, params, trace, targets, loss)
    if corrupt:
        analytic.weights[0][0] += 1e-3
    numeric = numeric_gradient(spec, params, x, targets, loss)
    rel = max(relative_error(a, n) for a, n in zip(analytic.arrays(), numeric.arrays()))
    ab = max(float(np.max(np.abs(a - n))) for a, n in zip(analytic.arrays(), numeric.arrays()))
    n_params = sum(a.size for a in analytic.arrays())
    return CheckResult(name or f"{spec.preset}-K{spec.num_outputs}", loss.kind, n_params, rel, ab)


def default_sweep(seed: int = 0, reg_beta: float = 0.05, n_samples: int = 4, corrupt: bool = False) -> list[CheckResult]:
    """Structured K=2 and K=9 plus fully connected K=2, both loss kinds."""
    results = []
    rng = np.random.default_rng(seed)
    for spec in (build_structured_spec(2), build_structured_spec(9), build_fc_spec(2)):
        params = xavier_init(spec, int(rng.integers(2**31)))
        # non-zero biases so their gradients are exercised away from the init point
        for b in params.biases:
            b[:] = rng.normal(0.0, 0.1, b.shape)
        x = rng.normal(size=(n_samples, spec.layer_sizes[0]))
        y = rng.integers(0, spec.num_outputs, n_samples)
        for kind in ("ce", "mse"):
            results.append(check_gradients(spec, params, x, y, LossConfig(kind, reg_beta), corrupt=corrupt))
    return results
