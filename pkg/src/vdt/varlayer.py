"""Mean-field Gaussian variational last layer.

The final linear map of a model carries a factorised Gaussian posterior:
one (mu, rho) pair per weight and bias, with sigma = softplus(rho) keeping
scales positive. Sampling uses theta = mu + sigma * eps so gradients flow
through both parameters; the KL against an isotropic Gaussian prior is
closed form. Repeated stochastic passes give a predictive mean and the
2.5%/97.5% quantile band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .layers import ACTIVATIONS, _uniform_init
from .numkit import RngStream, quantile

INIT_SIGMA = 0.05  # initial posterior spread: small but nonzero


def softplus_inv(y: float) -> float:
    return float(np.log(np.expm1(y)))


@dataclass(frozen=True)
class IsotropicPrior:
    """Zero-mean Gaussian prior with one shared scale."""

    prior_sigma: float = 1.0

    def __post_init__(self):
        if self.prior_sigma <= 0:
            raise ValueError("prior_sigma must be positive")


@dataclass(frozen=True)
class GaussianPosterior:
    """Flat per-parameter means and pre-softplus scales of the last linear map."""

    mu: np.ndarray
    rho: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.logaddexp(0.0, self.rho)


def sample_theta(post: GaussianPosterior, stream: RngStream) -> np.ndarray:
    """One reparameterised draw theta = mu + softplus(rho) * eps."""
    eps = stream.generator().standard_normal(post.mu.size)
    return post.mu + post.sigma * eps


def kl_divergence(post: GaussianPosterior, prior: IsotropicPrior) -> float:
    """Closed-form KL(q || prior), summed over parameters; zero iff q equals the prior."""
    sigma = post.sigma
    ps = prior.prior_sigma
    terms = np.log(ps / sigma) + (sigma**2 + post.mu**2) / (2.0 * ps**2) - 0.5
    return float(terms.sum())


def vdt_loss(batch_pred, batch_target, post: GaussianPosterior, prior: IsotropicPrior,
             beta: float) -> float:
    """Mean-squared reconstruction error plus beta-weighted KL (to be minimised)."""
    pred = np.asarray(batch_pred, dtype=np.float64)
    target = np.asarray(batch_target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return float(np.mean((pred - target) ** 2) + beta * kl_divergence(post, prior))


class VariationalLinear:
    """Final linear map with a factorised Gaussian weight-and-bias posterior.

    Parameters are stored flat (weights row-major, then bias) so the
    posterior is one (mu, rho) vector pair; the forward pass reshapes a
    sampled theta into the (in, out) map.
    """

    def __init__(self, in_dim: int, out_dim: int, mu: np.ndarray, rho: np.ndarray,
                 prior: IsotropicPrior = IsotropicPrior()):
        if mu.shape != rho.shape or mu.size != (in_dim + 1) * out_dim:
            raise ValueError("posterior size must be (in_dim+1)*out_dim")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.mu = ad.param(mu)
        self.rho = ad.param(rho)
        self.prior = prior

    @classmethod
    def init(cls, in_dim: int, out_dim: int, stream: RngStream,
             prior: IsotropicPrior = IsotropicPrior()) -> "VariationalLinear":
        w = _uniform_init(stream, in_dim, (in_dim, out_dim))
        mu = np.concatenate([w.reshape(-1), np.zeros(out_dim)])
        rho = np.full(mu.size, softplus_inv(INIT_SIGMA))
        return cls(in_dim, out_dim, mu, rho, prior)

    @property
    def n_params(self) -> int:
        return (self.in_dim + 1) * self.out_dim

    def posterior(self) -> GaussianPosterior:
        return GaussianPosterior(self.mu.value.copy(), self.rho.value.copy())

    def theta(self, eps: np.ndarray | None) -> ad.Var:
        """Sampled parameter vector as a graph node (posterior mean if eps is None)."""
        if eps is None:
            return self.mu
        sigma = ad.softplus(self.rho)
        return ad.add(self.mu, ad.mul(sigma, ad.constant(eps)))

    def forward(self, x: ad.Var, eps: np.ndarray | None) -> ad.Var:
        theta = self.theta(eps)
        w = ad.reshape(ad.narrow(theta, 0, 0, self.in_dim * self.out_dim),
                       (self.in_dim, self.out_dim))
        b = ad.narrow(theta, 0, self.in_dim * self.out_dim, self.out_dim)
        return ad.add(ad.matmul(x, w), b)

    def kl_term(self) -> ad.Var:
        """Graph version of the closed-form KL, for the training objective."""
        sigma = ad.softplus(self.rho)
        ps = self.prior.prior_sigma
        log_ratio = ad.sub(float(np.log(ps)), ad.log(sigma))
        quad = ad.mul(ad.add(ad.square(sigma), ad.square(self.mu)), 1.0 / (2.0 * ps**2))
        return ad.vsum(ad.sub(ad.add(log_ratio, quad), 0.5))

    def params(self, prefix: str):
        # variational parameters are never weight-decayed
        return [(f"{prefix}.mu", self.mu, False), (f"{prefix}.rho", self.rho, False)]


@dataclass
class PredictiveSummary:
    """Per-row predictive mean, 95% band, and the raw stochastic draws."""

    mean: np.ndarray  # (n, outputs)
    lower: np.ndarray
    upper: np.ndarray
    draws: np.ndarray  # (S, n, outputs)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def summarize_draws(draws: np.ndarray) -> PredictiveSummary:
    """Exact column mean plus 2.5%/97.5% interpolation quantiles of (S, n, out) draws."""
    S = draws.shape[0]
    if S < 2:
        raise ValueError("need >=2 samples for quantiles")
    flat = draws.reshape(S, -1)
    mean = flat.mean(axis=0)
    lower = quantile(flat, 0.025, axis=0)
    upper = quantile(flat, 0.975, axis=0)
    shape = draws.shape[1:]
    return PredictiveSummary(mean.reshape(shape), lower.reshape(shape),
                             upper.reshape(shape), draws)


def predict_with_ci(model, x, S: int, stream: RngStream) -> PredictiveSummary:
    """S stochastic passes, each drawing theta from the pass-indexed substream."""
    if S < 2:
        raise ValueError("need >=2 samples for quantiles")
    draws = [model.predict(x, stream=stream.derive(s)) for s in range(S)]
    return summarize_draws(np.stack(draws, axis=0))


def uncertainty_score(summary: PredictiveSummary) -> np.ndarray:
    """Mean over outputs of the per-draw population std; one score per input row."""
    spread = summary.draws.std(axis=0)  # (n, outputs)
    return spread.mean(axis=-1)
