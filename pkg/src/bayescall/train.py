"""Minibatch training for dense and variational heads.

The dense head minimizes mean softmax cross-entropy.  The variational head
minimizes the minibatch ELBO loss: the same cross-entropy on a Flipout-sampled
forward pass plus the (default 1/n-weighted) KL between posterior and prior.
Per-epoch shuffling, per-batch sampling noise, and initialization all run on
streams derived from the training seed, so a run is a pure function of
(configs, data, seed).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ConfigurationError, DegenerateDatasetError
from .flipout import (
    ElboConfig,
    FlipoutDense,
    elbo_loss,
    flipout_backward,
    flipout_forward,
    kl_analytic,
    kl_analytic_grads,
    kl_mc_sample,
)
from .model import Model, ModelConfig, build_model, mean_logits
from .nn import (
    AdamState,
    DenseLayer,
    adam_step,
    dense_backward,
    dense_forward,
    log_softmax,
    softmax_cross_entropy,
)
from .pileup import Dataset, features_matrix
from .predict import InferenceConfig, predict_batch

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "TrainHistory",
    "EpochStats",
    "Metrics",
    "train_model",
    "evaluate_accuracy",
]


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    elbo: ElboConfig = field(default_factory=ElboConfig)
    # When off, posterior scales (rho) are frozen at their initial values;
    # lets a variational model train pinned to a chosen sigma.
    train_posterior_scale: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigurationError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "epoch": e.epoch,
                    "loss": e.loss,
                    "train_acc": e.train_acc,
                    "test_acc": e.test_acc,
                }
            )
            for e in self.epochs
        ]
        return "".join(line + "\n" for line in lines)

    def write_jsonl(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


@dataclass
class Metrics:
    accuracy: float
    mean_nll: float


def _trainable_params(model: Model, include_scale: bool) -> list[np.ndarray]:
    params = []
    for layer in model.layers:
        if isinstance(layer, DenseLayer):
            params += [layer.weights, layer.bias]
        else:
            post = layer.posterior
            params += [post.mu_w, post.mu_b]
            if include_scale:
                params += [post.rho_w, post.rho_b]
    return params


def _forward_backward(model: Model, xb, yb, rng):
    """One sampled forward/backward round: (nll, per-layer gradient structs)."""
    caches = []
    h = xb
    for layer in model.layers:
        if isinstance(layer, DenseLayer):
            h, cache = dense_forward(layer, h)
        else:
            h, cache = flipout_forward(layer, h, rng)
        caches.append(cache)
    nll, grad = softmax_cross_entropy(h, yb)
    layer_grads = [None] * len(model.layers)
    for i in reversed(range(len(model.layers))):
        if isinstance(model.layers[i], DenseLayer):
            gw, gb, grad = dense_backward(caches[i], grad)
            layer_grads[i] = [gw, gb]
        else:
            fg = flipout_backward(caches[i], grad)
            layer_grads[i] = fg.as_list()
            grad = fg.batch
    return nll, layer_grads


def _batch_step(model: Model, xb, yb, rng, tc: TrainConfig, dataset_size: int):
    """Averaged loss and flattened gradients for one minibatch.

    Stochastic models average the sampled NLL path over n_mc_elbo rounds; the
    KL term is added once (exactly, or as the matching MC average).
    """
    rounds = tc.elbo.n_mc_elbo if model.is_stochastic else 1
    nll_sum = 0.0
    acc = None  # per layer: [grad arrays] summed over rounds
    kl_value = 0.0
    kl_grads = {}  # layer index -> summed [g_mu_w, g_rho_w, g_mu_b, g_rho_b]
    for _ in range(rounds):
        nll, layer_grads = _forward_backward(model, xb, yb, rng)
        nll_sum += nll
        if acc is None:
            acc = layer_grads
        else:
            for have, new in zip(acc, layer_grads):
                for g, extra in zip(have, new):
                    g += extra
        if model.is_stochastic and tc.elbo.kl_mode == "mc":
            for i, layer in enumerate(model.layers):
                if isinstance(layer, FlipoutDense):
                    value, sample_grads = kl_mc_sample(layer.posterior, layer.prior, rng)
                    kl_value += value
                    if i in kl_grads:
                        for g, extra in zip(kl_grads[i], sample_grads):
                            g += extra
                    else:
                        kl_grads[i] = list(sample_grads)

    nll_mean = nll_sum / rounds
    if not model.is_stochastic:
        return nll_mean, [g for layer in acc for g in layer]

    if tc.elbo.kl_mode == "analytic":
        kl_value = 0.0
        for i, layer in enumerate(model.layers):
            if isinstance(layer, FlipoutDense):
                kl_value += kl_analytic(layer.posterior, layer.prior)
                kl_grads[i] = [rounds * g for g in kl_analytic_grads(layer.posterior, layer.prior)]
    else:
        kl_value /= rounds

    weight = tc.elbo.kl_weight if tc.elbo.kl_weight is not None else 1.0 / dataset_size
    loss = elbo_loss(nll_mean, kl_value, tc.elbo, dataset_size, xb.shape[0])
    grads = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, DenseLayer):
            grads += [g / rounds for g in acc[i]]
        else:
            # FlipoutGrads order: mu_w, rho_w, mu_b, rho_b
            nll_g = acc[i]
            kl_g = kl_grads[i]
            total = [(nll_g[j] + weight * kl_g[j]) / rounds for j in range(4)]
            grads += [total[0], total[2]]
            if tc.train_posterior_scale:
                grads += [total[1], total[3]]
    return loss, grads


def _accuracy(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction correct under the deterministic mean forward pass."""
    preds = np.argmax(mean_logits(model, x), axis=1)
    return float(np.mean(preds == y))


def _check_dataset(name: str, ds: Dataset, mc: ModelConfig):
    if len(ds) == 0:
        raise ConfigurationError(f"{name} dataset is empty")
    x, y = features_matrix(ds)
    if x.shape[1] != mc.in_features:
        raise ConfigurationError(
            f"{name} examples have {x.shape[1]} features, model expects {mc.in_features}"
        )
    return x, y


def train_model(
    mc: ModelConfig, tc: TrainConfig, train: Dataset, test: Dataset
) -> tuple[Model, TrainHistory]:
    """Train a freshly initialized model; returns it with per-epoch history.

    History accuracies use the deterministic mean forward pass for both head
    kinds (a cheap trend signal); final scoring belongs to evaluate_accuracy.
    """
    x_train, y_train = _check_dataset("train", train, mc)
    x_test, y_test = _check_dataset("test", test, mc)
    model = build_model(mc, tc.seed)
    params = _trainable_params(model, tc.train_posterior_scale)
    adam = AdamState.for_params(params, learning_rate=tc.learning_rate)
    n = x_train.shape[0]

    history = TrainHistory()
    for epoch in range(tc.epochs):
        order = rngmod.stream(tc.seed, rngmod.SHUFFLE, epoch).permutation(n)
        loss_sum = 0.0
        for b, start in enumerate(range(0, n, tc.batch_size)):
            idx = order[start : start + tc.batch_size]
            rng = (
                rngmod.stream(tc.seed, rngmod.TRAIN_NOISE, epoch, b)
                if model.is_stochastic
                else None
            )
            loss, grads = _batch_step(model, x_train[idx], y_train[idx], rng, tc, n)
            adam_step(params, grads, adam)
            loss_sum += loss * len(idx)
        history.epochs.append(
            EpochStats(
                epoch=epoch,
                loss=loss_sum / n,
                train_acc=_accuracy(model, x_train, y_train),
                test_acc=_accuracy(model, x_test, y_test),
            )
        )
    return model, history


def evaluate_accuracy(model: Model, ds: Dataset, inference_cfg: InferenceConfig) -> Metrics:
    """Accuracy and mean NLL; variational heads score MC-mean probabilities."""
    if len(ds) == 0:
        raise DegenerateDatasetError("cannot evaluate an empty dataset")
    x, y = features_matrix(ds)
    if model.is_stochastic:
        dists = predict_batch(model, ds, inference_cfg.n_mc, inference_cfg.seed)
        p1 = np.array([d.mean for d in dists])
        probs = np.column_stack([1.0 - p1, p1])
        preds = np.argmax(probs, axis=1)
        # MC means can hit exactly 0/1; floor them so the NLL stays finite
        label_probs = np.maximum(probs[np.arange(len(y)), y], 1e-300)
        nll = -float(np.mean(np.log(label_probs)))
    else:
        logp = log_softmax(mean_logits(model, x))
        preds = np.argmax(logp, axis=1)
        nll = -float(np.mean(logp[np.arange(len(y)), y]))
    return Metrics(accuracy=float(np.mean(preds == y)), mean_nll=nll)
