"""Diagonal Gaussian action distributions with optional tanh squashing.

Actions are produced as ``T_u(N(x_mu, T_rho(x_rho + c_rho) + eps_rho))`` where
``T_rho`` maps network outputs to a positive scale, ``eps_rho`` is a minimum
standard deviation and ``c_rho`` is solved so that ``x_rho = 0`` gives the
requested initial standard deviation.

Every differentiable quantity returns its value together with the gradient
w.r.t. the inputs it depends on; arrays are ``(batch, act_dim)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError

LOG_2PI = float(np.log(2.0 * np.pi))
EXP_CLIP = 15.0
STD_TRANSFORMS = ("safe_exp", "softplus")
ACTION_POSTPROCESSING = ("clip", "tanh")


def std_transform(kind: str, x):
    """Return ``(T(x), dT/dx)``.

    ``safe_exp`` clips the exponent to [-15, 15] but passes gradients through
    the clip unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "safe_exp":
        y = np.exp(np.clip(x, -EXP_CLIP, EXP_CLIP))
        return y, y
    if kind == "softplus":
        y = np.logaddexp(0.0, x)
        return y, 0.5 * (1.0 + np.tanh(0.5 * x))
    raise UsageError(f"unknown std transform {kind!r}")


def std_transform_inverse(kind: str, y):
    y = np.asarray(y, dtype=np.float64)
    if kind == "safe_exp":
        return np.log(y)
    if kind == "softplus":
        # log(exp(y) - 1), stable for large y
        return y + np.log(-np.expm1(-y))
    raise UsageError(f"unknown std transform {kind!r}")


@dataclass(frozen=True)
class DistConfig:
    std_transform: str = "safe_exp"
    min_std: float = 1e-3
    initial_std: float = 1.0
    action_post: str = "clip"

    def __post_init__(self):
        if self.std_transform not in STD_TRANSFORMS:
            raise ConfigError(f"unknown stdtransform {self.std_transform!r}", "stdtransform")
        if self.action_post not in ACTION_POSTPROCESSING:
            raise ConfigError(f"unknown actionpost {self.action_post!r}", "actionpost")
        if self.min_std < 0:
            raise ConfigError("minstd must be nonnegative", "minstd")
        if self.initial_std <= self.min_std:
            raise ConfigError("initialstd must exceed minstd", "initialstd")

    @property
    def std_offset(self) -> float:
        """c_rho such that T_rho(0 + c_rho) + eps_rho equals the initial std."""
        return float(std_transform_inverse(self.std_transform, self.initial_std - self.min_std))


@dataclass
class GaussianHead:
    mu: np.ndarray
    sigma: np.ndarray
    dsigma_dxrho: np.ndarray
    config: DistConfig

    @property
    def act_dim(self):
        return self.mu.shape[-1]


def build_head(x_mu, x_rho, config: DistConfig) -> GaussianHead:
    x_mu = np.atleast_2d(np.asarray(x_mu, dtype=np.float64))
    x_rho = np.broadcast_to(np.asarray(x_rho, dtype=np.float64), x_mu.shape)
    core, dcore = std_transform(config.std_transform, x_rho + config.std_offset)
    return GaussianHead(x_mu, core + config.min_std, dcore, config)


def gaussian_head(mu, sigma, config: DistConfig | None = None) -> GaussianHead:
    """Head from explicit mean and std (no transform), mainly for tests and ``ref``."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), mu.shape).copy()
    return GaussianHead(mu, sigma, np.ones_like(sigma), config or DistConfig())


@dataclass
class ActionSample:
    raw: np.ndarray
    env_action: np.ndarray
    behavior_log_prob: np.ndarray
    gaussian_log_prob: np.ndarray | None = None   # density of ``raw`` before squashing


def log_tanh_derivative(x):
    """log(1 - tanh(x)^2) computed without cancellation."""
    x = np.asarray(x, dtype=np.float64)
    return 2.0 * (np.log(2.0) - x - np.logaddexp(0.0, -2.0 * x))


def postprocess(kind: str, raw):
    if kind == "clip":
        return np.clip(raw, -1.0, 1.0)
    if kind == "tanh":
        return np.tanh(raw)
    raise UsageError(f"unknown action postprocessing {kind!r}")


def sample(head: GaussianHead, rng) -> ActionSample:
    noise = rng.standard_normal(head.mu.shape)
    raw = head.mu + head.sigma * noise
    glp, _, _ = log_prob(head, raw)
    lp = glp
    if head.config.action_post == "tanh":
        lp = glp - log_tanh_derivative(raw).sum(axis=-1)
    return ActionSample(raw, postprocess(head.config.action_post, raw), lp, glp)


def log_prob(head: GaussianHead, raw):
    """Gaussian log density of the pre-squash sample.

    Returns ``(logp[B], dlogp/dmu[B, A], dlogp/dx_rho[B, A])``.
    """
    z = (raw - head.mu) / head.sigma
    logp = np.sum(-0.5 * z * z - np.log(head.sigma) - 0.5 * LOG_2PI, axis=-1)
    dmu = z / head.sigma
    dsigma = (z * z - 1.0) / head.sigma
    return logp, dmu, dsigma * head.dsigma_dxrho


def entropy(head: GaussianHead, raw_sample=None):
    """Entropy of the action distribution.

    clip mode: analytic Gaussian entropy. tanh mode: single-sample estimate
    ``-log p(x) + sum log tanh'(x)`` at ``raw_sample``, differentiated by
    reparameterization (the standardized noise of the sample is held fixed).
    Returns ``(H[B], dH/dmu, dH/dx_rho)``.
    """
    if head.config.action_post == "clip":
        h = np.sum(0.5 * (LOG_2PI + 1.0) + np.log(head.sigma), axis=-1)
        return h, np.zeros_like(head.mu), head.dsigma_dxrho / head.sigma
    if raw_sample is None:
        raise UsageError("tanh-mode entropy needs a raw sample")
    eps = (raw_sample - head.mu) / head.sigma
    x = head.mu + head.sigma * eps
    h = np.sum(0.5 * eps * eps + np.log(head.sigma) + 0.5 * LOG_2PI + log_tanh_derivative(x),
               axis=-1)
    dlt = -2.0 * np.tanh(x)
    dsigma = 1.0 / head.sigma + dlt * eps
    return h, dlt, dsigma * head.dsigma_dxrho


def gaussian_kl(mu_p, sig_p, mu_q, sig_q):
    """KL(p || q) of diagonal Gaussians summed over the last axis.

    Returns ``(kl, d/dmu_p, d/dsig_p, d/dmu_q, d/dsig_q)``.
    """
    diff = mu_p - mu_q
    vq = sig_q * sig_q
    kl = np.sum(np.log(sig_q / sig_p) + (sig_p * sig_p + diff * diff) / (2.0 * vq) - 0.5,
                axis=-1)
    d_mu_p = diff / vq
    d_sig_p = -1.0 / sig_p + sig_p / vq
    d_mu_q = -d_mu_p
    d_sig_q = 1.0 / sig_q - (sig_p * sig_p + diff * diff) / (vq * sig_q)
    return kl, d_mu_p, d_sig_p, d_mu_q, d_sig_q


def kl(head_p: GaussianHead, head_q: GaussianHead):
    """KL(p || q); gradients are w.r.t. both heads' (mu, x_rho)."""
    val, dmp, dsp, dmq, dsq = gaussian_kl(head_p.mu, head_p.sigma, head_q.mu, head_q.sigma)
    return val, (dmp, dsp * head_p.dsigma_dxrho), (dmq, dsq * head_q.dsigma_dxrho)


def decoupled_kl(head_mu: GaussianHead, head_pi: GaussianHead):
    """Split KL(mu || pi) through zeta = N(mean of mu, std of pi).

    Returns ``(mean_term, std_term)`` where ``mean_term = KL(zeta || pi)`` and
    ``std_term = KL(mu || zeta)``; each is ``(value, (dmu_pi, dxrho_pi))`` with
    gradients w.r.t. the second (pi) head only.
    """
    diff = head_mu.mu - head_pi.mu
    sp = head_pi.sigma
    vp = sp * sp
    mean_val = np.sum(diff * diff / (2.0 * vp), axis=-1)
    mean_dmu = -diff / vp
    mean_dsig = -diff * diff / (vp * sp)
    sm = head_mu.sigma
    std_val = np.sum(np.log(sp / sm) + sm * sm / (2.0 * vp) - 0.5, axis=-1)
    std_dsig = 1.0 / sp - sm * sm / (vp * sp)
    return (
        (mean_val, (mean_dmu, mean_dsig * head_pi.dsigma_dxrho)),
        (std_val, (np.zeros_like(diff), std_dsig * head_pi.dsigma_dxrho)),
    )
