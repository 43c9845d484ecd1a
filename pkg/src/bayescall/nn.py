"""Minimal deterministic dense-network machinery.

Matrices are row-major float64 numpy arrays throughout; batches are laid out
as (n_examples, n_features).  Forward passes return a cache that the matching
backward pass consumes to produce exact reverse-mode gradients, which the
finite-difference harness verifies against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError, ShapeError

Activation = Literal["relu", "identity"]


def check_matrix(name: str, a: np.ndarray, cols: int | None = None) -> np.ndarray:
    """Validate a 2-D float64 matrix, optionally with a fixed column count."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if cols is not None and a.shape[1] != cols:
        raise ShapeError(f"{name} has shape {a.shape}, expected {a.shape[0]}x{cols}")
    return a


def apply_activation(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    raise ConfigurationError(f"unknown activation {kind!r}")


def activation_gradient(kind: Activation, z: np.ndarray) -> np.ndarray:
    """d activation / d pre-activation, evaluated elementwise at z."""
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "identity":
        return np.ones_like(z)
    raise ConfigurationError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    """Affine layer with a fixed activation: act(x @ weights + bias)."""

    weights: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: Activation = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("weights must be 2-D and bias 1-D")
        if self.bias.shape[0] != self.weights.shape[1]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} does not match "
                f"weight columns {self.weights.shape[1]}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class DenseCache:
    layer: DenseLayer
    batch: np.ndarray
    pre_activation: np.ndarray


def dense_forward(layer: DenseLayer, batch: np.ndarray) -> tuple[np.ndarray, DenseCache]:
    """Compute act(batch @ W + b) with a cache for the backward pass."""
    batch = check_matrix("batch", batch, cols=layer.in_dim)
    z = batch @ layer.weights + layer.bias
    return apply_activation(layer.activation, z), DenseCache(layer, batch, z)


def dense_backward(
    cache: DenseCache, grad_output: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients (grad_W, grad_b, grad_input) of the cached forward."""
    grad_output = check_matrix("grad_output", grad_output, cols=cache.layer.out_dim)
    if grad_output.shape[0] != cache.batch.shape[0]:
        raise ShapeError(
            f"grad_output rows {grad_output.shape[0]} do not match "
            f"batch rows {cache.batch.shape[0]}"
        )
    g = grad_output * activation_gradient(cache.layer.activation, cache.pre_activation)
    grad_w = cache.batch.T @ g
    grad_b = g.sum(axis=0)
    grad_input = g @ cache.layer.weights.T
    return grad_w, grad_b, grad_input


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log softmax via the log-sum-exp shift."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the categorical head and its logit gradient.

    Returns (loss, grad_logits) with grad = (softmax - onehot) / n, the exact
    gradient of the mean loss.
    """
    logits = check_matrix("logits", logits)
    if not np.all(np.isfinite(logits)):
        raise NumericError("logits contain non-finite values")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"labels shape {labels.shape} does not match logits rows {logits.shape[0]}"
        )
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class AdamState:
    """Bias-corrected adaptive-moment optimizer state for a list of parameters."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], learning_rate: float = 1e-3) -> "AdamState":
        state = cls(learning_rate=learning_rate)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> None:
    """Update params in place with one bias-corrected Adam step."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(
            f"got {len(params)} params, {len(grads)} grads, "
            f"state holds {len(state.m)}"
        )
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        m_hat = m / correction1
        v_hat = v / correction2
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def finite_difference_check(
    loss_and_grad: Callable[[Sequence[np.ndarray]], tuple[float, Sequence[np.ndarray]]],
    params: Sequence[np.ndarray],
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_and_grad(params)`` must return (scalar loss, gradients matching the
    parameter shapes).  Every coordinate is perturbed by +/- h; the relative
    error |a - n| / max(1e-12, |a| + |n|) is maximized over all coordinates.
    """
    if h <= 0:
        raise ConfigurationError(f"step size must be positive, got {h}")
    params = [np.asarray(p, dtype=np.float64) for p in params]
    loss, grads = loss_and_grad(params)
    if not np.isfinite(loss):
        raise NumericError("loss is non-finite at the evaluation point")
    worst = 0.0
    for pi, p in enumerate(params):
        flat = p.reshape(-1)
        analytic = np.asarray(grads[pi], dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_and_grad(params)
            flat[i] = orig - h
            down, _ = loss_and_grad(params)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("loss is non-finite at a perturbed point")
            numeric = (up - down) / (2.0 * h)
            err = abs(analytic[i] - numeric) / max(1e-12, abs(analytic[i]) + abs(numeric))
            worst = max(worst, err)
    return worst
