"""Policy regularization: fixed penalties or Lagrangian soft constraints.

Regularizer kinds:

``entropy``
    H(pi); as a penalty it is *subtracted* (bonus), as a constraint it is a floor.
``kl_mu_pi`` / ``kl_pi_mu``
    KL between behavior (mu) and current (pi) policy, in either direction.
``kl_ref_pi``
    KL(N(0, 1) || pi).
``decoupled_kl_mu_pi``
    KL(mu || pi) split into mean and std terms with separate strengths.

Constraint multipliers are ``alpha = exp(c p)`` with ``c = 10``; ``p`` is
trained by the run optimizer on ``alpha * sg(eps - R)`` (sign flipped for the
entropy floor) and clipped after every step so that ``alpha`` stays in
[1e-6, 1e6].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import distributions as D
from .errors import ConfigError

REG_TYPES = ("none", "penalty", "constraint")
REG_KINDS = ("entropy", "kl_mu_pi", "kl_pi_mu", "kl_ref_pi", "decoupled_kl_mu_pi")
MULTIPLIER_SCALE = 10.0
P_MIN = float(np.log(1e-6) / MULTIPLIER_SCALE)
P_MAX = float(np.log(1e6) / MULTIPLIER_SCALE)


@dataclass
class LagrangeState:
    p: float = 0.0
    c: float = MULTIPLIER_SCALE

    @property
    def alpha(self) -> float:
        return float(np.exp(self.c * self.p))

    def clip(self):
        self.p = float(np.clip(self.p, P_MIN, P_MAX))


@dataclass(frozen=True)
class RegularizerCfg:
    mode: str = "none"
    kind: str | None = None
    coef: float | None = None          # penalty strength or constraint threshold
    coef_std: float | None = None      # std part of the decoupled KL

    def __post_init__(self):
        if self.mode not in REG_TYPES:
            raise ConfigError(f"unknown regularization type {self.mode!r}", "regularizationtype")
        if self.mode == "none":
            return
        if self.kind not in REG_KINDS:
            raise ConfigError(f"unknown regularizer {self.kind!r}", "regularizer")
        if self.coef is None or (self.kind == "decoupled_kl_mu_pi" and self.coef_std is None):
            raise ConfigError("missing regularizer coefficient", "regularizer")
        if self.mode == "penalty" and (self.coef < 0 or (self.coef_std or 0) < 0):
            raise ConfigError("penalty coefficients must be nonnegative", "regularizer")

    @property
    def n_multipliers(self):
        if self.mode != "constraint":
            return 0
        return 2 if self.kind == "decoupled_kl_mu_pi" else 1


def reference_head(like: D.GaussianHead) -> D.GaussianHead:
    return D.gaussian_head(np.zeros_like(like.mu), np.ones_like(like.sigma), like.config)


def reg_term(kind: str, current: D.GaussianHead, behavior: D.GaussianHead, raw_sample=None):
    """Per-sample regularizer value(s) and gradients w.r.t. the current head.

    Returns a list of ``(R[B], dR/dmu, dR/dx_rho)``; two entries (mean, std)
    for the decoupled KL, one otherwise. Entropy is returned as H (positive).
    """
    if kind == "entropy":
        return [D.entropy(current, raw_sample)]
    if kind == "kl_mu_pi":
        val, _, (dmu, dxr) = D.kl(behavior, current)
        return [(val, dmu, dxr)]
    if kind == "kl_pi_mu":
        val, (dmu, dxr), _ = D.kl(current, behavior)
        return [(val, dmu, dxr)]
    if kind == "kl_ref_pi":
        val, _, (dmu, dxr) = D.kl(reference_head(current), current)
        return [(val, dmu, dxr)]
    if kind == "decoupled_kl_mu_pi":
        (mv, (mdmu, mdx)), (sv, (sdmu, sdx)) = D.decoupled_kl(behavior, current)
        return [(mv, mdmu, mdx), (sv, sdmu, sdx)]
    raise ConfigError(f"unknown regularizer {kind!r}", "regularizer")


def penalty_loss(R, alpha, kind):
    """alpha * R, with R replaced by -H for the entropy bonus."""
    sign = -1.0 if kind == "entropy" else 1.0
    return sign * alpha * R


def constraint_loss(R_detached: float, state: LagrangeState, threshold: float, kind: str):
    """Multiplier loss ``alpha * sg(eps - R)`` and its derivative w.r.t. ``p``.

    KL kinds are ceilings (R < eps): alpha grows while R > eps. Entropy is a
    floor (R > eps), so the sign is flipped.
    """
    alpha = state.alpha
    gap = threshold - R_detached
    if kind == "entropy":
        gap = -gap
    return alpha * gap, state.c * alpha * gap


@dataclass
class RegularizerOutput:
    loss: float
    dmu: np.ndarray
    dxrho: np.ndarray
    dp: list
    values: list
    alphas: list


def regularize(cfg: RegularizerCfg, current: D.GaussianHead, behavior: D.GaussianHead,
               states: list, raw_sample=None) -> RegularizerOutput:
    """Total minibatch-mean regularization loss and its gradients.

    ``states`` holds one :class:`LagrangeState` per multiplier (constraint
    mode only). Returned ``dp`` are gradients of the multiplier losses.
    """
    if cfg.mode == "none":
        z = np.zeros_like(current.mu)
        return RegularizerOutput(0.0, z, np.zeros_like(current.sigma), [], [], [])
    terms = reg_term(cfg.kind, current, behavior, raw_sample)
    coefs = [cfg.coef] if len(terms) == 1 else [cfg.coef, cfg.coef_std]
    n = current.mu.shape[0]
    sign = -1.0 if cfg.kind == "entropy" else 1.0
    loss = 0.0
    dmu = np.zeros_like(current.mu)
    dxr = np.zeros_like(current.sigma)
    dps, values, alphas = [], [], []
    for i, ((val, gmu, gxr), coef) in enumerate(zip(terms, coefs)):
        r_mean = float(val.mean())
        values.append(r_mean)
        if cfg.mode == "penalty":
            alpha = coef
        else:
            alpha = states[i].alpha
            m_loss, m_grad = constraint_loss(r_mean, states[i], coef, cfg.kind)
            loss += m_loss
            dps.append(m_grad)
        alphas.append(alpha)
        loss += sign * alpha * r_mean
        dmu += sign * alpha * gmu / n
        dxr += sign * alpha * gxr / n
    return RegularizerOutput(loss, dmu, dxr, dps, values, alphas)
