"""Monte-Carlo predictive inference.

For a variational model the predictive distribution is approximated by
averaging class probabilities over independent posterior weight draws.  For
one input row x the pre-activation of a variational layer under a weight
draw W ~ Normal(mu, diag(sigma^2)) is itself Gaussian with independent
coordinates,

    z_j ~ Normal(x . mu_:j + mu_bj,  (x*x) . sigma_:j^2 + sigma_bj^2),

because distinct output coordinates touch disjoint weight entries.  Sampling
z directly from that distribution is therefore distribution-identical to
materializing a full weight draw, at a small fraction of the cost; each MC
sample still corresponds to one independent weight draw.

Dense models are deterministic: every sample equals the point prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .errors import ConfigurationError, ShapeError
from .flipout import FlipoutDense
from .model import Model
from .nn import DenseLayer, apply_activation, dense_forward, softmax
from .pileup import Dataset, EncodedExample


@dataclass
class InferenceConfig:
    """Evaluation-time sampling settings."""

    n_mc: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_mc < 1:
            raise ConfigurationError(f"n_mc must be >= 1, got {self.n_mc}")


@dataclass(eq=False)
class PredictiveDistribution:
    """Per-input MC samples of the somatic-class probability."""

    samples: np.ndarray  # (n_mc,) values in [0, 1]
    mean: float
    std: float
    n_mc: int

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "PredictiveDistribution":
        samples = np.asarray(samples, dtype=np.float64)
        if samples.size and np.ptp(samples) == 0.0:
            # point mass: exact moments (summation rounding would otherwise
            # leave a spurious ~1e-17 std)
            return cls(samples, float(samples[0]), 0.0, samples.size)
        return cls(samples, float(samples.mean()), float(samples.std()), samples.size)


def _flatten_features(model: Model, x: EncodedExample) -> np.ndarray:
    features = x.features.reshape(1, -1)
    if features.shape[1] != model.in_features:
        raise ShapeError(
            f"example has {features.shape[1]} features, model expects {model.in_features}"
        )
    return features


def mc_predict(
    model: Model, x: EncodedExample, n_mc: int, rng: np.random.Generator
) -> PredictiveDistribution:
    """Predictive distribution from n_mc independent posterior weight draws."""
    if n_mc < 1:
        raise ConfigurationError(f"n_mc must be >= 1, got {n_mc}")
    h = _flatten_features(model, x)

    # Deterministic prefix: everything before the first variational layer is
    # shared by all draws.
    first_stochastic = len(model.layers)
    for i, layer in enumerate(model.layers):
        if isinstance(layer, FlipoutDense):
            first_stochastic = i
            break
        h, _ = dense_forward(layer, h)

    if first_stochastic == len(model.layers):
        point = softmax(h)[0, 1]
        return PredictiveDistribution.from_samples(np.full(n_mc, point))

    # The first variational layer sees the same row in every draw, so its
    # Gaussian moments are computed once; draws then become a batch of rows.
    first = model.layers[first_stochastic]
    hk = apply_activation(
        first.activation, _gaussian_layer_samples(first, h, n_mc, rng)
    )
    for layer in model.layers[first_stochastic + 1 :]:
        if isinstance(layer, DenseLayer):
            hk, _ = dense_forward(layer, hk)
        else:
            post = layer.posterior
            mean = hk @ post.mu_w + post.mu_b
            var = np.square(hk) @ np.square(post.sigma_w) + np.square(post.sigma_b)
            z = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
            hk = apply_activation(layer.activation, z)
    return PredictiveDistribution.from_samples(softmax(hk)[:, 1])


def _gaussian_layer_samples(
    layer: FlipoutDense, row: np.ndarray, n_mc: int, rng: np.random.Generator
) -> np.ndarray:
    """n_mc pre-activation draws of one variational layer for a single row."""
    post = layer.posterior
    mean = row @ post.mu_w + post.mu_b
    var = np.square(row) @ np.square(post.sigma_w) + np.square(post.sigma_b)
    return mean + np.sqrt(var) * rng.standard_normal((n_mc, mean.shape[1]))


def predict_batch(
    model: Model, ds: Dataset, n_mc: int, seed: int
) -> list[PredictiveDistribution]:
    """mc_predict for every example, each on its own content-derived stream.

    The stream id hashes the example's feature bytes, so an example's samples
    do not depend on its position in the dataset or on its neighbors.
    """
    if n_mc < 1:
        raise ConfigurationError(f"n_mc must be >= 1, got {n_mc}")
    out = []
    for ex in ds:
        if not isinstance(ex, EncodedExample):
            raise ConfigurationError("dataset must be encoded before prediction")
        rng = rngmod.stream(seed, rngmod.PREDICT, rngmod.content_stream_id(ex.features))
        out.append(mc_predict(model, ex, n_mc, rng))
    return out
