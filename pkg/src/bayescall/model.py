"""Model container: a stack of dense and variational layers, plus JSON IO.

A model flattens each (depth, 6*width) feature matrix into one row vector and
pushes it through dense/relu hidden layers into a two-logit head.  The head
(and optionally every layer) can be a Flipout variational layer.  Matched
seeds give the dense weights and the variational means identical initial
values, so the two head kinds start from the same point.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ConfigurationError, FormatError, ShapeError
from .flipout import FlipoutDense, GaussianPosterior, PriorSpec, rho_of_sigma
from .nn import DenseLayer, check_matrix, dense_forward

MODEL_FORMAT_VERSION = 1

# Initial posterior scale; small enough that early training tracks the
# deterministic baseline.
INIT_SIGMA = 0.05

HEAD_KINDS = ("dense", "flipout")


@dataclass
class ModelConfig:
    """Architecture settings: input shape, hidden sizes, and head kind."""

    input_dims: tuple[int, int]  # (depth, 6*width)
    hidden: list[int] = field(default_factory=lambda: [64, 32])
    head_kind: str = "dense"
    variational_everywhere: bool = False
    init_posterior_scale: float = INIT_SIGMA

    def __post_init__(self):
        self.input_dims = (int(self.input_dims[0]), int(self.input_dims[1]))
        self.hidden = [int(h) for h in self.hidden]
        if self.input_dims[0] < 1 or self.input_dims[1] < 1:
            raise ConfigurationError(f"input_dims must be positive, got {self.input_dims}")
        if any(h < 1 for h in self.hidden):
            raise ConfigurationError(f"hidden sizes must be positive, got {self.hidden}")
        if not self.init_posterior_scale > 0:
            raise ConfigurationError(
                f"init_posterior_scale must be positive, got {self.init_posterior_scale}"
            )
        if self.head_kind not in HEAD_KINDS:
            raise ConfigurationError(
                f"head_kind must be one of {HEAD_KINDS}, got {self.head_kind!r}"
            )
        if self.variational_everywhere and self.head_kind != "flipout":
            raise ConfigurationError(
                "variational_everywhere requires head_kind='flipout'"
            )

    @property
    def in_features(self) -> int:
        return self.input_dims[0] * self.input_dims[1]


@dataclass(eq=False)
class Model:
    """A trained or trainable layer stack over flattened pileup features."""

    input_dims: tuple[int, int]
    layers: list  # DenseLayer | FlipoutDense

    def __post_init__(self):
        self.input_dims = (int(self.input_dims[0]), int(self.input_dims[1]))
        if not self.layers:
            raise ConfigurationError("a model needs at least one layer")
        expected = self.in_features
        for i, layer in enumerate(self.layers):
            if layer.in_dim != expected:
                raise ShapeError(
                    f"layer {i} expects {layer.in_dim} inputs, previous width is {expected}"
                )
            expected = layer.out_dim
        if expected != 2:
            raise ConfigurationError(f"final layer must emit 2 logits, got {expected}")

    @property
    def in_features(self) -> int:
        return self.input_dims[0] * self.input_dims[1]

    @property
    def head_kind(self) -> str:
        return "flipout" if isinstance(self.layers[-1], FlipoutDense) else "dense"

    @property
    def is_stochastic(self) -> bool:
        return any(isinstance(layer, FlipoutDense) for layer in self.layers)

    def hidden_sizes(self) -> list[int]:
        return [layer.out_dim for layer in self.layers[:-1]]


def build_model(cfg: ModelConfig, seed: int) -> Model:
    """Initialize a model; dense weights and variational means share draws.

    Weights are uniform in +/- sqrt(6 / (fan_in + fan_out)), biases zero, and
    posterior scales start at a constant sigma (default 0.05) via rho.  Layer
    i draws from its own derived stream, so adding layers never shifts
    earlier draws.
    """
    sizes = [cfg.in_features, *cfg.hidden, 2]
    rho0 = rho_of_sigma(cfg.init_posterior_scale)
    layers = []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        layer_rng = rngmod.stream(seed, rngmod.INIT, i)
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights = layer_rng.uniform(-bound, bound, size=(fan_in, fan_out))
        bias = np.zeros(fan_out)
        is_head = i == len(sizes) - 2
        activation = "identity" if is_head else "relu"
        variational = cfg.head_kind == "flipout" and (is_head or cfg.variational_everywhere)
        if variational:
            posterior = GaussianPosterior(
                weights,
                np.full_like(weights, rho0),
                bias,
                np.full(fan_out, rho0),
            )
            layers.append(FlipoutDense(posterior, PriorSpec(), activation))
        else:
            layers.append(DenseLayer(weights, bias, activation))
    return Model(cfg.input_dims, layers)


def mean_logits(model: Model, batch: np.ndarray) -> np.ndarray:
    """Deterministic forward pass with every variational layer at its mean."""
    h = check_matrix("batch", batch, cols=model.in_features)
    for layer in model.layers:
        dense = layer if isinstance(layer, DenseLayer) else layer.mean_layer()
        h, _ = dense_forward(dense, h)
    return h


# ---------------------------------------------------------------------------
# JSON serialization.  Floats go through Python's shortest round-trip repr,
# so load(save(model)) reproduces every parameter bit-for-bit.
# ---------------------------------------------------------------------------

def _layer_to_dict(layer) -> dict:
    if isinstance(layer, DenseLayer):
        return {
            "kind": "dense",
            "activation": layer.activation,
            "weights": layer.weights.tolist(),
            "bias": layer.bias.tolist(),
        }
    post = layer.posterior
    return {
        "kind": "flipout",
        "activation": layer.activation,
        "prior_sigma": layer.prior.sigma_p,
        "mu_w": post.mu_w.tolist(),
        "rho_w": post.rho_w.tolist(),
        "mu_b": post.mu_b.tolist(),
        "rho_b": post.rho_b.tolist(),
    }


def model_to_dict(model: Model) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "input_dims": list(model.input_dims),
        "head_kind": model.head_kind,
        "hidden": model.hidden_sizes(),
        "layers": [_layer_to_dict(layer) for layer in model.layers],
    }


def _layer_from_dict(index: int, doc: dict):
    try:
        kind = doc["kind"]
        activation = doc["activation"]
        if kind == "dense":
            return DenseLayer(np.array(doc["weights"]), np.array(doc["bias"]), activation)
        if kind == "flipout":
            posterior = GaussianPosterior(
                np.array(doc["mu_w"]),
                np.array(doc["rho_w"]),
                np.array(doc["mu_b"]),
                np.array(doc["rho_b"]),
            )
            return FlipoutDense(posterior, PriorSpec(float(doc["prior_sigma"])), activation)
        raise FormatError(f"layer {index} has unknown kind {kind!r}")
    except KeyError as exc:
        raise FormatError(f"layer {index} is missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError, ShapeError) as exc:
        raise FormatError(f"layer {index} is malformed: {exc}") from exc


def model_from_dict(doc: dict) -> Model:
    if not isinstance(doc, dict):
        raise FormatError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version!r}")
    try:
        input_dims = tuple(int(v) for v in doc["input_dims"])
        layer_docs = doc["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad model document: {exc}") from exc
    if len(input_dims) != 2:
        raise FormatError(f"input_dims must have 2 entries, got {len(input_dims)}")
    layers = [_layer_from_dict(i, d) for i, d in enumerate(layer_docs)]
    try:
        return Model(input_dims, layers)
    except (ConfigurationError, ShapeError) as exc:
        raise FormatError(f"inconsistent model document: {exc}") from exc


def save_model(model: Model, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path: str | os.PathLike) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"model file is not valid JSON: {exc}", exc.pos) from exc
    return model_from_dict(doc)
