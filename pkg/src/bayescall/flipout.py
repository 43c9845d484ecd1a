"""Gaussian mean-field variational dense layer with Flipout sampling.

The posterior over each weight and bias is an independent Gaussian with mean
mu and scale sigma = softplus(rho); the prior is a fixed zero-mean Gaussian.
A forward pass samples one shared weight perturbation delta_W = sigma * eps
and decorrelates batch rows with per-row Rademacher sign vectors:

    out_n = x_n @ mu_W + ((x_n * s_n) @ delta_W) * r_n + b_n

where b_n is an independently perturbed bias sample per row.  Gradients are
pathwise: noise is held fixed and differentiated through sigma(rho).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError
from .nn import (
    Activation,
    DenseLayer,
    activation_gradient,
    apply_activation,
    check_matrix,
)


def sigma_of_rho(rho: np.ndarray | float) -> np.ndarray:
    """softplus(rho) = ln(1 + e^rho), stable for large |rho|."""
    rho = np.asarray(rho, dtype=np.float64)
    return np.maximum(rho, 0.0) + np.log1p(np.exp(-np.abs(rho)))


def rho_of_sigma(sigma: float) -> float:
    """Inverse softplus; valid for sigma > 0."""
    if sigma <= 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    return float(np.log(np.expm1(sigma)))


def dsigma_drho(rho: np.ndarray) -> np.ndarray:
    """d softplus / d rho = logistic(rho), in the overflow-free tanh form."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(rho, dtype=np.float64)))


@dataclass
class GaussianPosterior:
    """Independent Gaussian posterior over a weight matrix and bias vector."""

    mu_w: np.ndarray  # (in, out)
    rho_w: np.ndarray  # (in, out)
    mu_b: np.ndarray  # (out,)
    rho_b: np.ndarray  # (out,)

    def __post_init__(self):
        for name in ("mu_w", "rho_w", "mu_b", "rho_b"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.mu_w.shape != self.rho_w.shape or self.mu_w.ndim != 2:
            raise ShapeError("mu_w and rho_w must be matching 2-D arrays")
        if self.mu_b.shape != self.rho_b.shape or self.mu_b.shape != (self.mu_w.shape[1],):
            raise ShapeError("bias parameter shapes must be (out,)")

    @property
    def sigma_w(self) -> np.ndarray:
        return sigma_of_rho(self.rho_w)

    @property
    def sigma_b(self) -> np.ndarray:
        return sigma_of_rho(self.rho_b)


@dataclass
class PriorSpec:
    """Zero-mean isotropic Gaussian prior over every weight and bias."""

    sigma_p: float = 1.0

    def __post_init__(self):
        if self.sigma_p <= 0:
            raise ConfigurationError(f"prior sigma must be positive, got {self.sigma_p}")


@dataclass
class FlipoutDense:
    """Variational dense layer sampled with the Flipout estimator."""

    posterior: GaussianPosterior
    prior: PriorSpec
    activation: Activation = "identity"

    @property
    def in_dim(self) -> int:
        return self.posterior.mu_w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.posterior.mu_w.shape[1]

    def mean_layer(self) -> DenseLayer:
        """Deterministic layer at the posterior mean (the sigma -> 0 limit)."""
        return DenseLayer(
            self.posterior.mu_w.copy(), self.posterior.mu_b.copy(), self.activation
        )


@dataclass
class ElboConfig:
    """Minibatch ELBO estimator settings.

    kl_weight scales the total KL term per batch; None selects the 1/n
    convention (n = dataset size), which makes the expected per-example batch
    loss an unbiased estimate of -ELBO/n.
    """

    n_mc_elbo: int = 1
    kl_mode: str = "analytic"  # "analytic" or "mc"
    kl_weight: float | None = None

    def __post_init__(self):
        if self.n_mc_elbo < 1:
            raise ConfigurationError(f"n_mc_elbo must be >= 1, got {self.n_mc_elbo}")
        if self.kl_mode not in ("analytic", "mc"):
            raise ConfigurationError(f"kl_mode must be 'analytic' or 'mc', got {self.kl_mode!r}")
        if self.kl_weight is not None and self.kl_weight <= 0:
            raise ConfigurationError(f"kl_weight must be positive, got {self.kl_weight}")


@dataclass
class FlipoutNoise:
    """All randomness of one Flipout forward, kept for frozen-noise replay."""

    eps_w: np.ndarray  # (in, out) standard normal
    eps_b: np.ndarray  # (batch, out) standard normal
    sign_in: np.ndarray  # (batch, in) Rademacher
    sign_out: np.ndarray  # (batch, out) Rademacher


def sample_flipout_noise(
    layer: FlipoutDense, batch_size: int, rng: np.random.Generator
) -> FlipoutNoise:
    """Draw the shared perturbation and per-row sign/bias noise for one pass."""
    eps_w = rng.standard_normal((layer.in_dim, layer.out_dim))
    eps_b = rng.standard_normal((batch_size, layer.out_dim))
    sign_in = rng.integers(0, 2, size=(batch_size, layer.in_dim)).astype(np.float64) * 2.0 - 1.0
    sign_out = rng.integers(0, 2, size=(batch_size, layer.out_dim)).astype(np.float64) * 2.0 - 1.0
    return FlipoutNoise(eps_w, eps_b, sign_in, sign_out)


@dataclass
class FlipoutCache:
    layer: FlipoutDense
    batch: np.ndarray
    noise: FlipoutNoise
    pre_activation: np.ndarray


def flipout_forward_with_noise(
    layer: FlipoutDense, batch: np.ndarray, noise: FlipoutNoise
) -> tuple[np.ndarray, FlipoutCache]:
    """Deterministic Flipout forward given explicit noise."""
    batch = check_matrix("batch", batch, cols=layer.in_dim)
    if noise.eps_b.shape != (batch.shape[0], layer.out_dim):
        raise ShapeError(
            f"noise batch size {noise.eps_b.shape[0]} does not match batch rows {batch.shape[0]}"
        )
    post = layer.posterior
    delta_w = post.sigma_w * noise.eps_w
    z = batch @ post.mu_w
    z += ((batch * noise.sign_in) @ delta_w) * noise.sign_out
    z += post.mu_b + post.sigma_b * noise.eps_b
    return apply_activation(layer.activation, z), FlipoutCache(layer, batch, noise, z)


def flipout_forward(
    layer: FlipoutDense, batch: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, FlipoutCache]:
    """Sampled Flipout forward: one shared perturbation, per-row sign flips."""
    batch = check_matrix("batch", batch, cols=layer.in_dim)
    noise = sample_flipout_noise(layer, batch.shape[0], rng)
    return flipout_forward_with_noise(layer, batch, noise)


def perturbed_forward(
    layer: FlipoutDense, batch: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Naive estimator: one weight and bias sample shared by every batch row.

    Baseline for the variance-reduction comparison; no sign decorrelation.
    """
    batch = check_matrix("batch", batch, cols=layer.in_dim)
    post = layer.posterior
    w = post.mu_w + post.sigma_w * rng.standard_normal(post.mu_w.shape)
    b = post.mu_b + post.sigma_b * rng.standard_normal(post.mu_b.shape)
    return apply_activation(layer.activation, batch @ w + b)


@dataclass
class FlipoutGrads:
    mu_w: np.ndarray
    rho_w: np.ndarray
    mu_b: np.ndarray
    rho_b: np.ndarray
    batch: np.ndarray  # gradient w.r.t. the input batch

    def as_list(self) -> list[np.ndarray]:
        return [self.mu_w, self.rho_w, self.mu_b, self.rho_b]


def flipout_backward(cache: FlipoutCache, grad_output: np.ndarray) -> FlipoutGrads:
    """Pathwise gradients of the sampled forward, holding all noise fixed."""
    layer = cache.layer
    grad_output = check_matrix("grad_output", grad_output, cols=layer.out_dim)
    if grad_output.shape[0] != cache.batch.shape[0]:
        raise ShapeError(
            f"grad_output rows {grad_output.shape[0]} do not match "
            f"batch rows {cache.batch.shape[0]}"
        )
    post = layer.posterior
    noise = cache.noise
    g = grad_output * activation_gradient(layer.activation, cache.pre_activation)

    grad_mu_w = cache.batch.T @ g
    g_flip = g * noise.sign_out
    signed_batch = cache.batch * noise.sign_in
    grad_sigma_w = (signed_batch.T @ g_flip) * noise.eps_w
    grad_rho_w = grad_sigma_w * dsigma_drho(post.rho_w)

    grad_mu_b = g.sum(axis=0)
    grad_sigma_b = (g * noise.eps_b).sum(axis=0)
    grad_rho_b = grad_sigma_b * dsigma_drho(post.rho_b)

    delta_w = post.sigma_w * noise.eps_w
    grad_batch = g @ post.mu_w.T + (g_flip @ delta_w.T) * noise.sign_in
    return FlipoutGrads(grad_mu_w, grad_rho_w, grad_mu_b, grad_rho_b, grad_batch)


def _kl_terms(mu: np.ndarray, sigma_q: np.ndarray, sigma_p: float) -> np.ndarray:
    return (
        np.log(sigma_p / sigma_q)
        + (np.square(sigma_q) + np.square(mu)) / (2.0 * sigma_p**2)
        - 0.5
    )


def kl_analytic(posterior: GaussianPosterior, prior: PriorSpec) -> float:
    """Closed-form KL(Q || prior), summed over all weights and biases."""
    if prior.sigma_p <= 0:
        raise ConfigurationError(f"prior sigma must be positive, got {prior.sigma_p}")
    total = _kl_terms(posterior.mu_w, posterior.sigma_w, prior.sigma_p).sum()
    total += _kl_terms(posterior.mu_b, posterior.sigma_b, prior.sigma_p).sum()
    return float(total)


def kl_analytic_grads(
    posterior: GaussianPosterior, prior: PriorSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of kl_analytic w.r.t. (mu_w, rho_w, mu_b, rho_b)."""
    sp2 = prior.sigma_p**2

    def grads(mu, rho):
        sigma = sigma_of_rho(rho)
        g_mu = mu / sp2
        g_rho = (sigma / sp2 - 1.0 / sigma) * dsigma_drho(rho)
        return g_mu, g_rho

    g_mu_w, g_rho_w = grads(posterior.mu_w, posterior.rho_w)
    g_mu_b, g_rho_b = grads(posterior.mu_b, posterior.rho_b)
    return g_mu_w, g_rho_w, g_mu_b, g_rho_b


def kl_mc(
    posterior: GaussianPosterior,
    prior: PriorSpec,
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """Monte-Carlo KL estimate: mean of ln q(w|theta) - ln p(w) over samples."""
    if n_samples < 1:
        raise ConfigurationError(f"n_samples must be >= 1, got {n_samples}")
    total = 0.0
    for _ in range(n_samples):
        total += kl_mc_sample(posterior, prior, rng)[0]
    return total / n_samples


def kl_mc_sample(
    posterior: GaussianPosterior,
    prior: PriorSpec,
    rng: np.random.Generator,
) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """One posterior sample's ln q - ln p and its pathwise parameter gradients.

    With w = mu + sigma * eps the sample term is
        ln q(w) - ln p(w) = -ln sigma - eps^2/2 + w^2/(2 sigma_p^2) + ln sigma_p,
    so d/dmu = w / sigma_p^2 and d/dsigma = -1/sigma + (w / sigma_p^2) * eps.
    """
    sp2 = prior.sigma_p**2
    value = 0.0
    grads = []
    for mu, rho in (
        (posterior.mu_w, posterior.rho_w),
        (posterior.mu_b, posterior.rho_b),
    ):
        sigma = sigma_of_rho(rho)
        eps = rng.standard_normal(mu.shape)
        w = mu + sigma * eps
        value += float(
            (-np.log(sigma) - 0.5 * np.square(eps)).sum()
            + (np.square(w) / (2.0 * sp2) + np.log(prior.sigma_p)).sum()
        )
        g_mu = w / sp2
        g_rho = (-1.0 / sigma + (w / sp2) * eps) * dsigma_drho(rho)
        grads.extend([g_mu, g_rho])
    return value, (grads[0], grads[1], grads[2], grads[3])


def elbo_loss(
    nll_batch_mean: float,
    kl_total: float,
    cfg: ElboConfig,
    dataset_size: int,
    batch_size: int,
) -> float:
    """Per-example minibatch loss: nll + kl_weight * kl_total.

    With the default 1/n weight, summing batch_loss * batch_size over one
    epoch recovers total NLL + kl_total, an unbiased -ELBO estimate.
    """
    if dataset_size < 1 or batch_size < 1:
        raise ConfigurationError(
            f"sizes must be positive, got dataset {dataset_size}, batch {batch_size}"
        )
    if batch_size > dataset_size:
        raise ConfigurationError(
            f"batch size {batch_size} exceeds dataset size {dataset_size}"
        )
    weight = cfg.kl_weight if cfg.kl_weight is not None else 1.0 / dataset_size
    return float(nll_batch_mean + weight * kl_total)
