"""Losses, the Adam optimizer and the staircase learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CE = "ce"
MSE = "mse"
LOSS_KINDS = (CE, MSE)
PROB_FLOOR = 1e-12


class LossUndefined(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class LrSchedule:
    initial_rate: float = 0.01
    decay_ratio: float = 0.9
    decay_step: int = 7000

    def __post_init__(self):
        if not self.initial_rate > 0:
            raise ValueError("initial_rate must be > 0")
        if not 0 < self.decay_ratio <= 1:
            raise ValueError("decay_ratio must be in (0, 1]")
        if self.decay_step < 1:
            raise ValueError("decay_step must be >= 1")


def lr_at(schedule: LrSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    return schedule.initial_rate * schedule.decay_ratio ** (step // schedule.decay_step)


@dataclass(frozen=True)
class LossConfig:
    kind: str = CE
    reg_beta: float = 0.05

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise LossUndefined(f"unknown loss kind {self.kind!r}")
        if self.reg_beta < 0:
            raise ValueError("reg_beta must be >= 0")


def one_hot(targets, k: int) -> np.ndarray:
    """Class indices (or already one-hot rows) to a float one-hot matrix."""
    t = np.asarray(targets)
    if t.ndim >= 1 and t.shape[-1] == k and t.dtype.kind == "f":
        return t.astype(np.float64)
    t = np.atleast_1d(t).astype(np.int64)
    out = np.zeros((len(t), k))
    out[np.arange(len(t)), t] = 1.0
    return out


def l2_penalty(weights, beta: float) -> float:
    # biases are not regularized
    return beta * float(sum(np.dot(w, w) for w in weights))


def data_loss(probs, targets, kind: str) -> np.ndarray:
    """Per-sample loss on softmax outputs, shape ``(n,)``."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = one_hot(targets, p.shape[1]).reshape(p.shape)
    if kind == MSE:
        return np.mean((p - y) ** 2, axis=1)
    if kind == CE:
        return -np.sum(y * np.log(np.maximum(p, PROB_FLOOR)), axis=1)
    raise LossUndefined(f"unknown loss kind {kind!r}")


def compute_loss(probs, targets, params, config: LossConfig) -> float:
    """Mean per-sample loss plus ``reg_beta * sum(w**2)`` over all weights.

    ``params`` may be ``None`` to skip the penalty.
    """
    loss = float(np.mean(data_loss(probs, targets, config.kind)))
    if params is not None and config.reg_beta:
        loss += l2_penalty(params.weights, config.reg_beta)
    return loss


def output_delta(probs, targets, kind: str) -> np.ndarray:
    """Per-sample derivative of the data loss w.r.t. the logits (before softmax)."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = one_hot(targets, p.shape[1]).reshape(p.shape)
    if kind == CE:
        delta = p - y
    elif kind == MSE:
        g = (2.0 / p.shape[1]) * (p - y)
        # softmax Jacobian: dp_k/dz_j = p_k (delta_jk - p_j)
        delta = p * (g - np.sum(g * p, axis=1, keepdims=True))
    else:
        raise LossUndefined(f"unknown loss kind {kind!r}")
    return delta if np.ndim(probs) > 1 else delta[0]


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kwargs) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **kwargs)


def adam_step(state: AdamState, params, grads, lr: float):
    """One bias-corrected Adam update. Returns ``(new_state, new_params)``; inputs are not mutated."""
    p_arr, g_arr = params.arrays(), grads.arrays()
    if len(p_arr) != len(g_arr) or len(p_arr) != len(state.m):
        raise ShapeMismatch("parameter/gradient/state arity differs")
    for p, g, m in zip(p_arr, g_arr, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"shape {p.shape} vs {g.shape} vs {m.shape}")

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(p_arr, g_arr, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, b1, b2, state.epsilon)
    return new_state, params.from_arrays(new_p)


@dataclass
class Vector:
    """Minimal parameter container for optimizing plain arrays with :func:`adam_step`."""

    values: list = field(default_factory=list)

    def arrays(self) -> list:
        return list(self.values)

    def from_arrays(self, arrays) -> "Vector":
        return Vector(list(arrays))

