"""Policy losses as functions of the target log-probabilities.

Each per-sample loss returns ``(loss[B], dloss/dtarget_log_prob[B])``. The
behavior log-probabilities and advantages are constants. Batch reduction
(the mean) is left to the caller, except for V-MPO whose weights are already
normalized over the selected half of the batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError

POLICY_LOSSES = ("PG", "V-Trace", "PPO", "AWR", "V-MPO", "RPA")
# losses that consume advantages of the behavioral policy
BEHAVIOR_ADVANTAGE_LOSSES = ("AWR", "V-MPO", "RPA")


def _f(x):
    return np.asarray(x, dtype=np.float64)


def pg_loss(target_lp, advantage):
    adv = _f(advantage)
    return -_f(target_lp) * adv, -adv


def vtrace_loss(target_lp, behavior_lp, advantage, rho_bar):
    """Policy gradient scaled by the stop-gradient truncated ratio."""
    target_lp, adv = _f(target_lp), _f(advantage)
    rho = np.minimum(np.exp(target_lp - _f(behavior_lp)), rho_bar)
    return -rho * target_lp * adv, -rho * adv


def ppo_loss(target_lp, behavior_lp, advantage, epsilon):
    """Clipped surrogate with the symmetric band [1/(1+eps), 1+eps]."""
    adv = _f(advantage)
    ratio = np.exp(_f(target_lp) - _f(behavior_lp))
    clipped = np.clip(ratio, 1.0 / (1.0 + epsilon), 1.0 + epsilon)
    unclipped_obj = ratio * adv
    clipped_obj = clipped * adv
    use_unclipped = unclipped_obj <= clipped_obj
    loss = -np.where(use_unclipped, unclipped_obj, clipped_obj)
    # d(ratio)/d(target_lp) = ratio; the clipped branch is flat unless the clip is inactive
    inside = (ratio > 1.0 / (1.0 + epsilon)) & (ratio < 1.0 + epsilon)
    grad = np.where(use_unclipped | inside, -ratio * adv, 0.0)
    return loss, grad


def awr_weights(advantage, beta, w_max):
    """min(exp(A / beta), w_max), evaluated in log space to avoid overflow."""
    adv = _f(advantage)
    return np.exp(np.minimum(adv / beta, np.log(w_max)))


def awr_loss(target_lp, advantage, beta, w_max):
    w = awr_weights(advantage, beta, w_max)
    return -_f(target_lp) * w, -w


def rpa_loss(target_lp, advantage):
    mask = (_f(advantage) > 0).astype(np.float64)
    return -_f(target_lp) * mask, -mask


def top_half(advantage):
    """Indices of the ceil(n/2) largest advantages; ties go to the lower index."""
    adv = _f(advantage)
    k = (adv.shape[0] + 1) // 2
    order = np.argsort(-adv, kind="stable")
    return np.sort(order[:k])


@dataclass
class VmpoOutput:
    loss: float
    dloss_dlp: np.ndarray
    temperature_loss: float
    dtemp_dlog_eta: float
    weights: np.ndarray
    selected: np.ndarray


def vmpo_loss(target_lp, advantage, log_eta: float, eps_eta: float) -> VmpoOutput:
    """V-MPO policy loss and temperature loss on one minibatch.

    ``eta = exp(log_eta)``. Weights are ``softmax(A / eta)`` over the top half
    and are constants for the policy loss. The temperature loss is
    ``eta * eps_eta + eta * log(mean_S exp(A / eta))``; its derivative is
    returned w.r.t. ``log_eta``.
    """
    target_lp, adv = _f(target_lp), _f(advantage)
    if adv.shape[0] < 2:
        raise UsageError("V-MPO needs a batch of at least 2 samples")
    eta = float(np.exp(log_eta))
    sel = top_half(adv)
    a = adv[sel] / eta
    m = a.max()
    ex = np.exp(a - m)
    w_sel = ex / ex.sum()
    log_mean = m + np.log(ex.mean())
    weights = np.zeros_like(adv)
    weights[sel] = w_sel
    loss = -float(np.sum(weights * target_lp))
    temp_loss = eta * eps_eta + eta * log_mean
    dtemp_deta = eps_eta + log_mean - float(np.sum(w_sel * adv[sel])) / eta
    return VmpoOutput(loss, -weights, float(temp_loss), dtemp_deta * eta, weights, sel)


@dataclass(frozen=True)
class PolicyLossCfg:
    kind: str = "PPO"
    ppo_epsilon: float = 0.2
    vtrace_rho: float = 1.0
    awr_beta: float = 0.1
    awr_w_max: float = 1.3
    vmpo_eps: float = 0.1

    def __post_init__(self):
        if self.kind not in POLICY_LOSSES:
            raise UsageError(f"unknown policy loss {self.kind!r}")


def policy_loss(cfg: PolicyLossCfg, target_lp, behavior_lp, advantage, log_eta: float = 0.0):
    """Minibatch-mean policy loss.

    Returns ``(loss, dloss/dtarget_lp[B], temperature_loss, dtemp/dlog_eta)``;
    the temperature terms are zero except for V-MPO.
    """
    n = len(target_lp)
    if cfg.kind == "V-MPO":
        out = vmpo_loss(target_lp, advantage, log_eta, cfg.vmpo_eps)
        return out.loss, out.dloss_dlp, out.temperature_loss, out.dtemp_dlog_eta
    if cfg.kind == "PG":
        loss, grad = pg_loss(target_lp, advantage)
    elif cfg.kind == "V-Trace":
        loss, grad = vtrace_loss(target_lp, behavior_lp, advantage, cfg.vtrace_rho)
    elif cfg.kind == "PPO":
        loss, grad = ppo_loss(target_lp, behavior_lp, advantage, cfg.ppo_epsilon)
    elif cfg.kind == "AWR":
        loss, grad = awr_loss(target_lp, advantage, cfg.awr_beta, cfg.awr_w_max)
    else:
        loss, grad = rpa_loss(target_lp, advantage)
    return float(loss.mean()), grad / n, 0.0, 0.0
