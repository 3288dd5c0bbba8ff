"""Advantage and value-target estimators, plus value losses.

All estimators accept either a single :class:`Fragment` or batched arrays of
shape ``(num_fragments, T)``. The backward recursions run in the compiled
kernels when available (see :mod:`onpolicy._kernels`).

Episode ends inside a fragment come in two flavours: ``terminated`` (true end,
zero continuation value) and ``abandoned`` (step limit). Abandoned steps are
treated as terminal unless abandoned-episode handling is enabled, in which
case the step's advantage is zero, its value target is ``V(s)``, and earlier
targets bootstrap from that value.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import UsageError


@dataclass
class Fragment:
    rewards: np.ndarray
    values: np.ndarray
    bootstrap_value: float
    terminated: np.ndarray = None
    abandoned: np.ndarray = None
    behavior_log_probs: np.ndarray = None
    target_log_probs: np.ndarray = None

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        n = self.rewards.shape[-1]
        if n == 0:
            raise UsageError("empty fragment")
        if self.values.shape != self.rewards.shape:
            raise UsageError("rewards and values must have the same shape")
        zeros = np.zeros(self.rewards.shape, dtype=bool)
        self.terminated = zeros if self.terminated is None else np.asarray(self.terminated, bool)
        self.abandoned = zeros if self.abandoned is None else np.asarray(self.abandoned, bool)
        if np.any(self.terminated & self.abandoned):
            raise UsageError("terminated and abandoned flags are mutually exclusive")
        zf = np.zeros(self.rewards.shape)
        if self.behavior_log_probs is None:
            self.behavior_log_probs = zf
        if self.target_log_probs is None:
            self.target_log_probs = self.behavior_log_probs

    def __len__(self):
        return self.rewards.shape[-1]


@dataclass
class AdvantageOutput:
    advantages: np.ndarray
    value_targets: np.ndarray


@dataclass
class _Batch:
    rewards: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    discounts: np.ndarray
    cut: np.ndarray
    log_rhos: np.ndarray
    squeeze: bool = field(default=False)


def _as_batch(frag: Fragment, gamma: float, handle_abandon: bool) -> _Batch:
    squeeze = frag.rewards.ndim == 1
    r = np.atleast_2d(frag.rewards)
    v = np.atleast_2d(frag.values)
    boot = np.atleast_1d(np.asarray(frag.bootstrap_value, dtype=np.float64))
    term = np.atleast_2d(frag.terminated)
    aband = np.atleast_2d(frag.abandoned)
    done = term | (aband & (not handle_abandon))
    cut = aband if handle_abandon else np.zeros_like(aband)
    next_v = np.concatenate([v[:, 1:], boot[:, None]], axis=1)
    disc = gamma * (1.0 - done.astype(np.float64))
    log_rhos = np.atleast_2d(np.asarray(frag.target_log_probs, dtype=np.float64)
                             - np.asarray(frag.behavior_log_probs, dtype=np.float64))
    return _Batch(np.ascontiguousarray(r), np.ascontiguousarray(v),
                  np.ascontiguousarray(next_v), np.ascontiguousarray(disc),
                  np.ascontiguousarray(cut, dtype=np.uint8), log_rhos, squeeze)


def _out(batch: _Batch, adv, targets) -> AdvantageOutput:
    if batch.squeeze:
        return AdvantageOutput(adv[0], targets[0])
    return AdvantageOutput(adv, targets)


def _check_gamma(gamma):
    if not 0.0 < gamma <= 1.0:
        raise UsageError("discount must lie in (0, 1]")


def nstep(frag: Fragment, gamma: float, n: int, handle_abandon: bool = False) -> AdvantageOutput:
    """N-step returns truncated at episode ends and at the fragment end."""
    _check_gamma(gamma)
    if int(n) < 1:
        raise UsageError("n must be >= 1")
    b = _as_batch(frag, gamma, handle_abandon)
    targets = _kernels.nstep_targets(b.rewards, b.values, b.next_values, b.discounts, b.cut,
                                     int(min(n, 2**62)))
    adv = targets - b.values
    adv[b.cut.astype(bool)] = 0.0
    return _out(b, adv, targets)


def gae(frag: Fragment, gamma: float, lam: float, handle_abandon: bool = False) -> AdvantageOutput:
    """Generalized advantage estimation via the linear-time backward recursion."""
    _check_gamma(gamma)
    if not 0.0 <= lam <= 1.0:
        raise UsageError("lambda must lie in [0, 1]")
    b = _as_batch(frag, gamma, handle_abandon)
    deltas = b.rewards + b.discounts * b.next_values - b.values
    adv = _kernels.discounted_backward(np.ascontiguousarray(deltas), b.discounts * lam, b.cut)
    return _out(b, adv, adv + b.values)


def vtrace_estimate(frag: Fragment, gamma: float, lam: float, c_bar: float = 1.0,
                    rho_bar: float = 1.0, handle_abandon: bool = False) -> AdvantageOutput:
    """V-trace value targets and importance-weighted policy advantages.

    Targets follow ``v_t - V_t = rho_t d_t + gamma lam c_t (v_{t+1} - V_{t+1})``
    with ``rho_t = min(ratio, rho_bar)`` and ``c_t = min(ratio, c_bar)``.
    The policy advantage bootstraps from the lambda-mixture
    ``lam v_{t+1} + (1 - lam) V_{t+1}``, so on-policy it equals GAE(lam).
    """
    _check_gamma(gamma)
    if not 0.0 <= lam <= 1.0:
        raise UsageError("lambda must lie in [0, 1]")
    b = _as_batch(frag, gamma, handle_abandon)
    if not np.all(np.isfinite(b.log_rhos)):
        raise UsageError("non-finite log importance ratios")
    ratios = np.exp(b.log_rhos)
    rhos = np.minimum(ratios, rho_bar)
    cs = np.minimum(ratios, c_bar)
    deltas = rhos * (b.rewards + b.discounts * b.next_values - b.values)
    corr = _kernels.discounted_backward(np.ascontiguousarray(deltas),
                                        np.ascontiguousarray(b.discounts * lam * cs), b.cut)
    targets = b.values + corr
    # v_{t+1}: within the fragment use the next target, at the end the bootstrap value
    next_targets = np.concatenate([targets[:, 1:], b.next_values[:, -1:]], axis=1)
    q = b.rewards + b.discounts * (lam * next_targets + (1.0 - lam) * b.next_values)
    adv = rhos * (q - b.values)
    adv[b.cut.astype(bool)] = 0.0
    return _out(b, adv, targets)


def apply_abandoned_handling(frag: Fragment, output: AdvantageOutput, enabled: bool,
                             estimator) -> AdvantageOutput:
    """Re-run ``estimator(frag, handle_abandon=True)`` when handling is enabled.

    ``output`` is the estimate computed with abandonment treated as
    termination; it is returned untouched when handling is disabled or the
    fragment holds no abandoned step.
    """
    if not enabled or not np.any(frag.abandoned):
        return output
    return estimator(frag, handle_abandon=True)


def estimate(kind: str, frag: Fragment, gamma: float, *, lam: float = 0.95, n: int = 10,
             c_rho: float = 1.0, handle_abandon: bool = False) -> AdvantageOutput:
    """Dispatch by advantage-estimator name ("GAE", "N-step", "V-Trace")."""
    if kind == "GAE":
        return gae(frag, gamma, lam, handle_abandon)
    if kind == "N-step":
        return nstep(frag, gamma, n, handle_abandon)
    if kind == "V-Trace":
        return vtrace_estimate(frag, gamma, lam, c_rho, c_rho, handle_abandon)
    raise UsageError(f"unknown advantage estimator {kind!r}")


@dataclass(frozen=True)
class ValueLossCfg:
    kind: str = "MSE"
    huber_delta: float = 1.0
    ppo_clip: float | None = None

    def __post_init__(self):
        if self.kind not in ("MSE", "Huber"):
            raise UsageError(f"unknown value loss {self.kind!r}")
        if self.kind == "Huber" and not self.huber_delta > 0:
            raise UsageError("huber delta must be positive")
        if self.ppo_clip is not None and not self.ppo_clip > 0:
            raise UsageError("ppo value clip must be positive")


def _base_value_loss(residual, cfg: ValueLossCfg):
    if cfg.kind == "MSE":
        return residual * residual, 2.0 * residual
    d = cfg.huber_delta
    a = np.abs(residual)
    quad = a <= d
    loss = np.where(quad, 0.5 * residual * residual, d * (a - 0.5 * d))
    grad = np.where(quad, residual, d * np.sign(residual))
    return loss, grad


def value_loss(pred, old_pred, target, cfg: ValueLossCfg):
    """Per-sample value loss and its derivative w.r.t. ``pred``.

    MSE is ``(pred - target)^2`` (no 1/2); Huber uses the usual 1/2 x^2 core.
    With PPO-style clipping the loss is the larger of the unclipped loss and
    the loss at ``old_pred + clip(pred - old_pred, -eps, eps)``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    loss, grad = _base_value_loss(pred - target, cfg)
    if cfg.ppo_clip is None:
        return loss, grad
    old_pred = np.asarray(old_pred, dtype=np.float64)
    eps = cfg.ppo_clip
    delta = pred - old_pred
    clipped = old_pred + np.clip(delta, -eps, eps)
    c_loss, c_grad = _base_value_loss(clipped - target, cfg)
    c_grad = c_grad * (np.abs(delta) < eps)
    use_clipped = c_loss > loss
    return np.where(use_clipped, c_loss, loss), np.where(use_clipped, c_grad, grad)


def with_target_log_probs(frag: Fragment, target_log_probs) -> Fragment:
    return replace(frag, target_log_probs=np.asarray(target_log_probs, dtype=np.float64))
