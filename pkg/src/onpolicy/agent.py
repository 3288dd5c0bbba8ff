"""Policy/value networks assembled from a choice configuration.

All trainable quantities live in one flat vector (:class:`FlatParams`); the
MLP weights are reshaped views into it, so an optimizer step on the vector
updates the networks directly. The vector is ordered networks first, then the
global std parameter, then auxiliary scalars (V-MPO temperature, Lagrange
multipliers), which are excluded from gradient clipping.
"""
from __future__ import annotations

import numpy as np

from . import distributions as D
from . import nn
from .config import ChoiceConfig
from .regularizers import RegularizerCfg

LOG_ETA_MIN = float(np.log(1e-6))
LOG_ETA_MAX = float(np.log(1e6))


class FlatParams:
    """Named arrays backed by a single contiguous float64 vector."""

    def __init__(self, named: dict):
        self.names = list(named)
        self.shapes = {k: np.shape(v) for k, v in named.items()}
        sizes = [int(np.prod(self.shapes[k])) for k in self.names]
        self.offsets = dict(zip(self.names, np.cumsum([0] + sizes[:-1]).tolist()))
        self.sizes = dict(zip(self.names, sizes))
        self.vec = np.zeros(sum(sizes))
        self.views = {}
        for k in self.names:
            o, n = self.offsets[k], self.sizes[k]
            view = self.vec[o:o + n].reshape(self.shapes[k])
            view[...] = named[k]
            self.views[k] = view

    def __len__(self):
        return self.vec.size

    def flatten(self, named_grads: dict) -> np.ndarray:
        g = np.zeros_like(self.vec)
        for k, v in named_grads.items():
            o, n = self.offsets[k], self.sizes[k]
            g[o:o + n] += np.ravel(v)
        return g

    def span(self, name):
        o = self.offsets[name]
        return slice(o, o + self.sizes[name])


def regularizer_cfg(cfg: ChoiceConfig) -> RegularizerCfg:
    if cfg.regularizationtype == "none":
        return RegularizerCfg("none")
    if cfg.regularizationtype == "penalty":
        kind = cfg.regularizerpenalty
        table = {
            "entropy": (cfg.regularizerpenaltyentropy, None),
            "kl_mu_pi": (cfg.regularizerpenaltyklmupi, None),
            "kl_pi_mu": (cfg.regularizerpenaltyklpimu, None),
            "kl_ref_pi": (cfg.regularizerpenaltyklrefpi, None),
            "decoupled_kl_mu_pi": (cfg.regularizerpenaltyklmupimean,
                                   cfg.regularizerpenaltyklmupistd),
        }
    else:
        kind = cfg.regularizerconstraint
        table = {
            "entropy": (cfg.regularizerconstraintentropy, None),
            "kl_mu_pi": (cfg.regularizerconstraintklmupi, None),
            "kl_pi_mu": (cfg.regularizerconstraintklpimu, None),
            "kl_ref_pi": (cfg.regularizerconstraintklrefpi, None),
            "decoupled_kl_mu_pi": (cfg.regularizerconstraintklmupimean,
                                   cfg.regularizerconstraintklmupistd),
        }
    coef, coef_std = table[kind]
    return RegularizerCfg(cfg.regularizationtype, kind, coef, coef_std)


def dist_cfg(cfg: ChoiceConfig) -> D.DistConfig:
    return D.DistConfig(cfg.stdtransform, cfg.minstd, cfg.initialstd, cfg.actionpost)


class Agent:
    def __init__(self, cfg: ChoiceConfig, obs_dim: int, act_dim: int, rng):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.dist = dist_cfg(cfg)
        self.shared = cfg.mlpshared == "shared"
        self.policy_out = act_dim if cfg.stdind else 2 * act_dim
        self.reg = regularizer_cfg(cfg)
        named = {}
        if self.shared:
            spec = nn.MlpSpec(obs_dim, [cfg.sharedwidth] * cfg.shareddepth, self.policy_out + 1,
                              cfg.activation, cfg.init, 1.0)
            self.net = nn.init_mlp(spec, rng)
            # two linear heads: rescale policy columns and the value column separately
            self.net.weights[-1][:, :self.policy_out] *= cfg.policyinit
            self.net.weights[-1][:, self.policy_out:] *= cfg.valueinit
            named.update(self.net.named_arrays("shared/"))
            self.nets = [("shared/", self.net)]
        else:
            pspec = nn.MlpSpec(obs_dim, [cfg.policywidth] * cfg.policydepth, self.policy_out,
                               cfg.activation, cfg.init, cfg.policyinit)
            vspec = nn.MlpSpec(obs_dim, [cfg.valuewidth] * cfg.valuedepth, 1,
                               cfg.activation, cfg.init, cfg.valueinit)
            self.policy_net = nn.init_mlp(pspec, rng)
            self.value_net = nn.init_mlp(vspec, rng)
            named.update(self.policy_net.named_arrays("policy/"))
            named.update(self.value_net.named_arrays("value/"))
            self.nets = [("policy/", self.policy_net), ("value/", self.value_net)]
        if cfg.stdind:
            named["std/x_rho"] = np.zeros(act_dim)
        self.n_clipped = sum(int(np.size(v)) for v in named.values())
        self.uses_eta = cfg.policyloss == "V-MPO"
        if self.uses_eta:
            named["aux/log_eta"] = np.zeros(())
        for i in range(self.reg.n_multipliers):
            named[f"aux/lagrange{i}"] = np.zeros(())
        self.params = FlatParams(named)
        for prefix, net in self.nets:
            net.bind(self.params.views, prefix)

    # -- trainable auxiliaries -------------------------------------------------
    @property
    def log_eta(self) -> float:
        return float(self.params.views["aux/log_eta"]) if self.uses_eta else 0.0

    def lagrange_p(self, i) -> float:
        return float(self.params.views[f"aux/lagrange{i}"])

    def clip_aux(self):
        if self.uses_eta:
            v = self.params.views["aux/log_eta"]
            v[...] = np.clip(v, LOG_ETA_MIN, LOG_ETA_MAX)
        from .regularizers import P_MAX, P_MIN
        for i in range(self.reg.n_multipliers):
            v = self.params.views[f"aux/lagrange{i}"]
            v[...] = np.clip(v, P_MIN, P_MAX)

    def touch(self):
        for _, net in self.nets:
            net.touch()

    # -- forward passes --------------------------------------------------------
    def forward(self, obs_n, need_value=True, need_policy=True):
        """Returns dict with ``head``, ``v_out`` and caches for :meth:`backward`."""
        out = {}
        A = self.act_dim
        if self.shared:
            y, cache = nn.forward(self.net, obs_n)
            out["cache"] = cache
            pol = y[:, :self.policy_out]
            out["v_out"] = y[:, self.policy_out]
        else:
            if need_policy:
                pol, out["pcache"] = nn.forward(self.policy_net, obs_n)
            if need_value:
                v, out["vcache"] = nn.forward(self.value_net, obs_n)
                out["v_out"] = v[:, 0]
        if need_policy or self.shared:
            x_mu = pol[:, :A]
            x_rho = self.params.views["std/x_rho"] if self.cfg.stdind else pol[:, A:2 * A]
            out["head"] = D.build_head(x_mu, np.broadcast_to(x_rho, x_mu.shape), self.dist)
        return out

    def value(self, obs_n):
        return self.forward(obs_n, need_policy=False)["v_out"]

    def head(self, obs_n):
        return self.forward(obs_n, need_value=False)["head"]

    def backward(self, fwd, g_mu, g_xrho, g_v):
        """Gradients of the loss given d/d(x_mu), d/d(x_rho) and d/d(value output)."""
        named = {}
        if self.cfg.stdind:
            pol_grad = g_mu
            named["std/x_rho"] = g_xrho.sum(axis=0)
        else:
            pol_grad = np.concatenate([g_mu, g_xrho], axis=1)
        if self.shared:
            dy = np.concatenate([pol_grad, g_v[:, None]], axis=1)
            grads, _ = nn.backward(self.net, fwd["cache"], dy)
            named.update(nn.grads_as_named(grads, "shared/"))
        else:
            pg, _ = nn.backward(self.policy_net, fwd["pcache"], pol_grad)
            vg, _ = nn.backward(self.value_net, fwd["vcache"], g_v[:, None])
            named.update(nn.grads_as_named(pg, "policy/"))
            named.update(nn.grads_as_named(vg, "value/"))
        return named

    def tensors(self):
        """(name, shape, values) triples for checkpointing."""
        return [(k, list(self.params.shapes[k]), np.ravel(self.params.views[k]).tolist())
                for k in self.params.names]
