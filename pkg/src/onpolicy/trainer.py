"""The policy-iteration loop: collection, advantage estimation, minibatch
updates, evaluation and scoring.

One iteration collects ``stepsize`` transitions as ``numenvs`` fragments of
length ``stepsize / numenvs`` from persistent environments, estimates
advantages, then runs ``numepochsperstep`` epochs of minibatch updates.

Randomness is split into independent child streams of the run seed
(initialization, environment resets, action noise, minibatch order,
evaluation, regularizer noise), so a (config, seed) pair determines the run
bit for bit.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import distributions as D
from . import estimators as E
from . import normalization as N
from .agent import Agent
from .config import ChoiceConfig, RunSettings, config_to_text, validate
from .envs import VecEnv, make_env
from .errors import NumericError, UsageError
from .losses import BEHAVIOR_ADVANTAGE_LOSSES, PolicyLossCfg, policy_loss
from .optim import OptimCfg, OptimState, lr_at, optimizer_step
from .regularizers import LagrangeState, regularize

METRICS_HEADER = (
    "iteration", "env_steps", "policy_loss", "value_loss", "reg_loss", "total_loss",
    "entropy", "kl_mu_pi", "grad_norm", "param_norm", "lr", "alpha", "alpha_std", "eta",
    "eval_return",
)

STREAMS = ("init", "env", "action", "minibatch", "eval", "noise")
RANDOM_BASELINE_EPISODES = 100


def seed_streams(seed: int) -> dict:
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


def optim_cfg(cfg: ChoiceConfig) -> OptimCfg:
    if cfg.optimizer == "Adam":
        return OptimCfg("Adam", cfg.adamlr, cfg.adammom, cfg.adameps, lr_decay=cfg.lrdecay)
    return OptimCfg("RMSProp", cfg.rmslr, cfg.rmsmom, cfg.rmseps, cfg.rmscent,
                    rms_decay=cfg.rmsdecay, lr_decay=cfg.lrdecay)


def policy_loss_cfg(cfg: ChoiceConfig) -> PolicyLossCfg:
    kw = {"kind": cfg.policyloss}
    if cfg.ppoepsilon is not None:
        kw["ppo_epsilon"] = cfg.ppoepsilon
    if cfg.vtracelossrho is not None:
        kw["vtrace_rho"] = cfg.vtracelossrho
    if cfg.awrbeta is not None:
        kw["awr_beta"] = cfg.awrbeta
    if cfg.awrw is not None:
        kw["awr_w_max"] = cfg.awrw
    if cfg.vmpoeps is not None:
        kw["vmpo_eps"] = cfg.vmpoeps
    return PolicyLossCfg(**kw)


def value_loss_cfg(cfg: ChoiceConfig) -> E.ValueLossCfg:
    return E.ValueLossCfg(cfg.valueloss, cfg.huberdelta or 1.0, cfg.ppovalueclip)


# -- experience ----------------------------------------------------------------

@dataclass
class ExperienceBuffer:
    """Arrays shaped (numenvs, fragment_length, ...)."""

    obs: np.ndarray
    raw_actions: np.ndarray
    env_actions: np.ndarray
    rewards: np.ndarray
    terminated: np.ndarray
    abandoned: np.ndarray
    behavior_log_probs: np.ndarray     # density of the raw action (squash-free)
    behavior_mu: np.ndarray
    behavior_sigma: np.ndarray
    values: np.ndarray                 # de-normalized predictions at collection time
    bootstrap_obs: np.ndarray
    bootstrap_values: np.ndarray
    frames: np.ndarray

    @property
    def num_envs(self):
        return self.rewards.shape[0]

    @property
    def fragment_length(self):
        return self.rewards.shape[1]

    @property
    def size(self):
        return self.rewards.size

    def fragment(self, e) -> E.Fragment:
        return E.Fragment(self.rewards[e], self.values[e], float(self.bootstrap_values[e]),
                          self.terminated[e], self.abandoned[e],
                          self.behavior_log_probs[e], self.behavior_log_probs[e])


@dataclass
class Minibatch:
    indices: np.ndarray                 # flat transition indices e * T + t
    fragments: np.ndarray | None = None  # whole-fragment modes only


def make_minibatches(num_envs, frag_len, mode, batchsize, epoch_index, rng):
    """Split ``num_envs * frag_len`` transitions into minibatches for one epoch."""
    total = num_envs * frag_len
    if batchsize < 1 or total % batchsize:
        raise UsageError(f"batchsize {batchsize} must divide {total}")
    if mode in ("shuffle_transitions", "shuffle_transitions_recompute"):
        perm = rng.permutation(total)
        return [Minibatch(perm[i:i + batchsize]) for i in range(0, total, batchsize)]
    if mode not in ("fixed_trajectories", "shuffle_trajectories"):
        raise UsageError(f"unknown batch handling mode {mode!r}")
    if batchsize % frag_len:
        raise UsageError(
            f"batchsize {batchsize} must be a multiple of the fragment length {frag_len}")
    k = batchsize // frag_len
    order = np.arange(num_envs) if mode == "fixed_trajectories" else rng.permutation(num_envs)
    out = []
    for i in range(0, num_envs, k):
        frags = order[i:i + k]
        idx = (frags[:, None] * frag_len + np.arange(frag_len)[None, :]).ravel()
        out.append(Minibatch(idx, frags))
    return out


# -- results -------------------------------------------------------------------

def performance_score(curve) -> float:
    """Mean of the evaluation returns along a learning curve."""
    if len(curve) == 0:
        raise UsageError("performance score needs at least one evaluation point")
    return float(np.mean([r for _, r in curve]))


def aggregate_seeds(scores) -> float:
    if len(scores) == 0:
        raise UsageError("no seed scores to aggregate")
    return float(np.median(np.asarray(scores, dtype=np.float64)))


@dataclass
class RunResult:
    curve: list
    score: float
    failed: bool
    iterations: int
    env_steps: int
    metrics: list = field(default_factory=list)
    failure: str | None = None


# -- trainer -------------------------------------------------------------------

class Trainer:
    def __init__(self, cfg: ChoiceConfig, run: RunSettings | None = None, seed: int | None = None):
        self.cfg = validate(cfg)
        self.run = run or RunSettings()
        self.seed = self.run.seed if seed is None else int(seed)
        self.rngs = seed_streams(self.seed)
        c = self.cfg
        self.gamma = c.discount ** c.frameskip
        self.env_spec = make_env(self.run.env).spec
        self.vec = VecEnv([make_env(self.run.env, c.frameskip) for _ in range(c.numenvs)],
                          self.rngs["env"])
        self.agent = Agent(c, self.env_spec.obs_dim, self.env_spec.act_dim, self.rngs["init"])
        self.optim = optim_cfg(c)
        self.opt_state = OptimState.zeros(len(self.agent.params))
        self.pl_cfg = policy_loss_cfg(c)
        self.vl_cfg = value_loss_cfg(c)
        self.obs_stats = N.RunningMoments.zeros(self.env_spec.obs_dim)
        self.value_stats = N.RunningMoments.zeros(())
        self.env_steps = 0
        self.iteration = 0
        self.frag_len = c.stepsize // c.numenvs

    # -- normalization helpers
    def norm_obs(self, obs):
        if self.cfg.norminput != "average":
            return np.asarray(obs, dtype=np.float64)
        return N.normalize_obs(self.obs_stats, obs, self.cfg.clipinput)

    def _value_stats(self):
        return self.value_stats if self.cfg.normreward == "average" else N.RunningMoments.zeros(())

    def values_raw(self, obs_n):
        return N.denormalize_value(self._value_stats(), self.agent.value(obs_n))

    # -- collection
    def collect_iteration(self) -> ExperienceBuffer:
        E_, T = self.cfg.numenvs, self.frag_len
        od, ad = self.env_spec.obs_dim, self.env_spec.act_dim
        obs = np.zeros((E_, T, od))
        raw = np.zeros((E_, T, ad))
        act = np.zeros((E_, T, ad))
        rew = np.zeros((E_, T))
        term = np.zeros((E_, T), dtype=bool)
        aban = np.zeros((E_, T), dtype=bool)
        blp = np.zeros((E_, T))
        bmu = np.zeros((E_, T, ad))
        bsig = np.zeros((E_, T, ad))
        vals = np.zeros((E_, T))
        frames = np.zeros((E_, T), dtype=np.int64)
        rng = self.rngs["action"]
        for t in range(T):
            o = self.vec.obs.copy()
            fwd = self.agent.forward(self.norm_obs(o))
            head = fwd["head"]
            s = D.sample(head, rng)
            obs[:, t] = o
            raw[:, t] = s.raw
            act[:, t] = s.env_action
            blp[:, t] = s.gaussian_log_prob
            bmu[:, t] = head.mu
            bsig[:, t] = head.sigma
            vals[:, t] = N.denormalize_value(self._value_stats(), fwd["v_out"])
            for e, res in enumerate(self.vec.step(s.env_action)):
                rew[e, t] = res.reward
                term[e, t] = res.terminated
                aban[e, t] = res.abandoned
                frames[e, t] = res.frames
        boot_obs = self.vec.obs.copy()
        boot_v = self.values_raw(self.norm_obs(boot_obs))
        self.env_steps += int(frames.sum())
        return ExperienceBuffer(obs, raw, act, rew, term, aban, blp, bmu, bsig, vals,
                                boot_obs, boot_v, frames)

    # -- estimation
    def _estimate(self, frag: E.Fragment) -> E.AdvantageOutput:
        c = self.cfg
        kind = c.advantageestimator
        lam = c.gaelambda if kind == "GAE" else c.vtraceaelambda
        return E.estimate(kind, frag, self.gamma, lam=lam if lam is not None else 0.95,
                          n=c.nstep or 10, c_rho=c.vtraceaecrho or 1.0,
                          handle_abandon=c.handleabandon)

    def current_estimates(self, buf: ExperienceBuffer, frags=None):
        """Advantages and value targets for the given fragments from the current
        value network and current policy log-probs."""
        frags = np.arange(buf.num_envs) if frags is None else np.asarray(frags)
        T = buf.fragment_length
        obs = buf.obs[frags].reshape(-1, buf.obs.shape[-1])
        obs_all = np.concatenate([obs, buf.bootstrap_obs[frags]])
        fwd = self.agent.forward(self.norm_obs(obs_all),
                                 need_policy=self.cfg.advantageestimator == "V-Trace")
        v = N.denormalize_value(self._value_stats(), fwd["v_out"])
        n = len(frags)
        values = v[:n * T].reshape(n, T)
        boot = v[n * T:]
        target_lp = buf.behavior_log_probs[frags]
        if self.cfg.advantageestimator == "V-Trace":
            head = fwd["head"]
            sub = D.GaussianHead(head.mu[:n * T], head.sigma[:n * T],
                                 head.dsigma_dxrho[:n * T], head.config)
            lp, _, _ = D.log_prob(sub, buf.raw_actions[frags].reshape(n * T, -1))
            target_lp = lp.reshape(n, T)
        frag = E.Fragment(buf.rewards[frags], values, boot, buf.terminated[frags],
                          buf.abandoned[frags], buf.behavior_log_probs[frags], target_lp)
        out = self._estimate(frag)
        return out.advantages.reshape(n, T), out.value_targets.reshape(n, T)

    def behavior_estimates(self, buf: ExperienceBuffer):
        """Estimates from collection-time values (on-policy log-probs)."""
        frag = E.Fragment(buf.rewards, buf.values, buf.bootstrap_values, buf.terminated,
                          buf.abandoned, buf.behavior_log_probs, buf.behavior_log_probs)
        out = self._estimate(frag)
        return out.advantages, out.value_targets

    # -- update
    def update_minibatch(self, buf, idx, adv_pol, targets, progress):
        c, agent = self.cfg, self.agent
        obs = buf.obs.reshape(-1, buf.obs.shape[-1])[idx]
        raw = buf.raw_actions.reshape(-1, buf.raw_actions.shape[-1])[idx]
        blp = buf.behavior_log_probs.reshape(-1)[idx]
        fwd = agent.forward(self.norm_obs(obs))
        head = fwd["head"]
        lp, dlp_dmu, dlp_dxr = D.log_prob(head, raw)
        adv = N.normalize_advantages(adv_pol) if c.normadv else adv_pol
        p_loss, dl_dlp, t_loss, dtemp = policy_loss(self.pl_cfg, lp, blp, adv, agent.log_eta)
        g_mu = dl_dlp[:, None] * dlp_dmu
        g_xr = dl_dlp[:, None] * dlp_dxr

        behavior = D.gaussian_head(buf.behavior_mu.reshape(-1, head.mu.shape[1])[idx],
                                   buf.behavior_sigma.reshape(-1, head.mu.shape[1])[idx],
                                   head.config)
        raw_sample = None
        if agent.reg.mode != "none" and agent.reg.kind == "entropy" and c.actionpost == "tanh":
            raw_sample = head.mu + head.sigma * self.rngs["noise"].standard_normal(head.mu.shape)
        states = [LagrangeState(agent.lagrange_p(i)) for i in range(agent.reg.n_multipliers)]
        reg = regularize(agent.reg, head, behavior, states, raw_sample)
        g_mu = g_mu + reg.dmu
        g_xr = g_xr + reg.dxrho

        vstats = self._value_stats()
        v_out = fwd["v_out"]
        target_n = N.normalize_value_target(vstats, targets)
        old_n = N.normalize_value_target(vstats, buf.values.reshape(-1)[idx])
        vl, dvl = E.value_loss(v_out, old_n, target_n, self.vl_cfg)
        cost = c.baselinecost if agent.shared else 1.0
        v_loss = float(vl.mean())
        g_v = cost * dvl / len(idx)

        total = p_loss + t_loss + cost * v_loss + reg.loss
        if not math.isfinite(total):
            raise NumericError("non-finite loss")
        named = agent.backward(fwd, g_mu, g_xr, g_v)
        if agent.uses_eta:
            named["aux/log_eta"] = np.asarray(dtemp)
        for i, dp in enumerate(reg.dp):
            named[f"aux/lagrange{i}"] = np.asarray(dp)
        grad = agent.params.flatten(named)
        k = agent.n_clipped
        grad_norm = float(np.linalg.norm(grad[:k]))
        grad[:k] = N.clip_gradient(grad[:k], c.clipgrad)
        if not np.all(np.isfinite(grad)):
            raise NumericError("non-finite gradient")
        optimizer_step(self.opt_state, agent.params.vec, grad,
                       lr_at(self.optim, progress), self.optim)
        agent.clip_aux()
        agent.touch()
        if not np.all(np.isfinite(agent.params.vec)):
            raise NumericError("non-finite parameters")
        return {"policy_loss": p_loss + t_loss, "value_loss": v_loss, "reg_loss": reg.loss,
                "total_loss": total, "grad_norm": grad_norm}

    def buffer_kl_entropy(self, buf):
        """Mean KL(mu || pi) and entropy of the current policy over the buffer."""
        obs = buf.obs.reshape(-1, buf.obs.shape[-1])
        head = self.agent.head(self.norm_obs(obs))
        A = head.mu.shape[1]
        behavior = D.gaussian_head(buf.behavior_mu.reshape(-1, A),
                                   buf.behavior_sigma.reshape(-1, A), head.config)
        kl, _, _ = D.kl(behavior, head)
        raw = None
        if self.cfg.actionpost == "tanh":
            raw = buf.raw_actions.reshape(-1, A)
        ent, _, _ = D.entropy(head, raw)
        return float(kl.mean()), float(ent.mean())

    def train_iteration(self, budget=None) -> dict:
        c = self.cfg
        budget = budget or self.run.budget
        buf = self.collect_iteration()
        if c.norminput == "average":
            N.update_moments(self.obs_stats, buf.obs.reshape(-1, buf.obs.shape[-1]))
        beh_adv, beh_targets = self.behavior_estimates(buf)
        if c.normreward == "average":
            N.update_moments(self.value_stats, beh_targets.ravel())
        progress = min(self.env_steps / budget, 1.0)
        mode = c.batchhandling
        whole = mode in ("fixed_trajectories", "shuffle_trajectories")
        adv, targets = beh_adv, beh_targets
        sums = {}
        n_updates = 0
        kl_per_epoch = []
        for epoch in range(c.numepochsperstep):
            if mode == "shuffle_transitions_recompute" and epoch > 0:
                adv, targets = self.current_estimates(buf)
            for mb in make_minibatches(buf.num_envs, buf.fragment_length, mode, c.batchsize,
                                       epoch, self.rngs["minibatch"]):
                if whole:
                    a_mb, t_mb = self.current_estimates(buf, mb.fragments)
                    a_mb, t_mb = a_mb.ravel(), t_mb.ravel()
                else:
                    a_mb, t_mb = adv.ravel()[mb.indices], targets.ravel()[mb.indices]
                if c.policyloss in BEHAVIOR_ADVANTAGE_LOSSES:
                    a_mb = beh_adv.ravel()[mb.indices]
                m = self.update_minibatch(buf, mb.indices, a_mb, t_mb, progress)
                for k, v in m.items():
                    sums[k] = sums.get(k, 0.0) + v
                n_updates += 1
            kl_per_epoch.append(self.buffer_kl_entropy(buf)[0])
        self.iteration += 1
        kl, ent = self.buffer_kl_entropy(buf)
        out = {k: v / n_updates for k, v in sums.items()}
        reg = self.agent.reg
        if reg.mode == "constraint":
            alphas = [LagrangeState(self.agent.lagrange_p(i)).alpha
                      for i in range(reg.n_multipliers)]
        elif reg.mode == "penalty":
            alphas = [reg.coef] + ([reg.coef_std] if reg.coef_std is not None else [])
        else:
            alphas = []
        out.update({
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "entropy": ent,
            "kl_mu_pi": kl,
            "param_norm": float(np.linalg.norm(self.agent.params.vec)),
            "lr": lr_at(self.optim, progress),
            "alpha": alphas[0] if alphas else float("nan"),
            "alpha_std": alphas[1] if len(alphas) > 1 else float("nan"),
            "eta": math.exp(self.agent.log_eta) if self.agent.uses_eta else float("nan"),
            "kl_per_epoch": kl_per_epoch,
        })
        return out

    # -- evaluation
    def evaluate(self, episodes=None, rng=None) -> float:
        return evaluate(self.agent, self.run.env, episodes or self.run.eval_episodes,
                        rng if rng is not None else self.rngs["eval"], self.norm_obs,
                        self.cfg.frameskip)

    def train(self, budget=None, on_iteration=None) -> RunResult:
        """Run until ``budget`` env steps, evaluating every ``eval_every`` steps."""
        budget = int(budget or self.run.budget)
        every = self.run.eval_every
        next_eval = every
        curve, rows = [], []
        failure = None
        while self.env_steps < budget:
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    m = self.train_iteration(budget)
            except NumericError as exc:
                failure = str(exc)
                break
            m["eval_return"] = float("nan")
            if self.env_steps >= next_eval or self.env_steps >= budget:
                m["eval_return"] = self.evaluate()
                curve.append((self.env_steps, m["eval_return"]))
                while next_eval <= self.env_steps:
                    next_eval += every
            rows.append(m)
            if on_iteration is not None:
                on_iteration(m)
        if failure is None:
            score = performance_score(curve)
        else:
            expected = max(budget // every, len(curve) + 1)
            baseline = random_baseline(self.cfg, self.run.env, self.seed)
            scores = [r for _, r in curve] + [baseline] * (expected - len(curve))
            score = float(np.mean(scores))
        return RunResult(curve, score, failure is not None, self.iteration, self.env_steps,
                         rows, failure)

    # -- persistence
    def checkpoint(self) -> dict:
        return {
            "format": "onpolicy-tensors-v1",
            "tensors": [{"name": n, "shape": s, "values": v} for n, s, v in self.agent.tensors()],
            "obs_stats": self.obs_stats.to_dict(),
            "value_stats": self.value_stats.to_dict(),
            "optimizer": self.opt_state.to_dict(),
            "iteration": self.iteration,
            "env_steps": self.env_steps,
        }

    def load_checkpoint(self, data: dict):
        if data.get("format") != "onpolicy-tensors-v1":
            raise UsageError("unrecognized checkpoint format")
        for t in data["tensors"]:
            view = self.agent.params.views[t["name"]]
            view[...] = np.asarray(t["values"], dtype=np.float64).reshape(t["shape"])
        self.agent.touch()
        self.obs_stats = N.RunningMoments.from_dict(data["obs_stats"])
        self.value_stats = N.RunningMoments.from_dict(data["value_stats"])
        opt = data.get("optimizer")
        if opt is not None:
            self.opt_state = OptimState(int(opt["t"]), np.asarray(opt["m"], float),
                                        np.asarray(opt["v"], float), np.asarray(opt["mg"], float))
        self.iteration = int(data.get("iteration", self.iteration))
        self.env_steps = int(data.get("env_steps", self.env_steps))


def evaluate(agent: Agent, env_id: str, episodes: int, rng, norm_obs, frameskip: int = 1):
    """Mean undiscounted return of ``episodes`` stochastic-policy episodes."""
    if episodes < 1:
        raise UsageError("need at least one evaluation episode")
    envs = [make_env(env_id, frameskip) for _ in range(episodes)]
    obs = np.stack([e.reset(rng) for e in envs])
    returns = np.zeros(episodes)
    alive = np.ones(episodes, dtype=bool)
    while alive.any():
        ids = np.flatnonzero(alive)
        head = agent.head(norm_obs(obs[ids]))
        s = D.sample(head, rng)
        for j, i in enumerate(ids):
            res = envs[i].step(s.env_action[j])
            returns[i] += res.reward
            obs[i] = res.obs
            if res.terminated or res.abandoned:
                alive[i] = False
    return float(returns.mean())


def random_baseline(cfg: ChoiceConfig, env_id: str, seed: int = 0,
                    episodes: int = RANDOM_BASELINE_EPISODES) -> float:
    """Mean return of the untrained policy (identity observation normalization)."""
    rngs = seed_streams(seed)
    spec = make_env(env_id).spec
    agent = Agent(validate(cfg), spec.obs_dim, spec.act_dim, rngs["init"])
    return evaluate(agent, env_id, episodes, rngs["eval"], lambda o: np.asarray(o, float),
                    cfg.frameskip)


# -- artifacts -----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow([_fmt(r.get(k, float("nan"))) for k in METRICS_HEADER])
    return buf.getvalue()


def train_run(cfg: ChoiceConfig, run: RunSettings, out_dir=None) -> RunResult:
    """Train once; with ``out_dir`` write metrics.csv, summary.json, config.txt
    and (optionally) checkpoint.json."""
    trainer = Trainer(cfg, run)
    result = trainer.train()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.csv"), "w") as fh:
            fh.write(metrics_csv(result.metrics))
        with open(os.path.join(out_dir, "config.txt"), "w") as fh:
            fh.write(config_to_text(trainer.cfg, run))
        summary = {
            "score": result.score,
            "seed": trainer.seed,
            "config_hash": trainer.cfg.config_hash(),
            "env": run.env,
            "env_steps": result.env_steps,
            "iterations": result.iterations,
            "failed": result.failed,
            "failure": result.failure,
            "curve": [[s, r] for s, r in result.curve],
        }
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if run.checkpoint:
            with open(os.path.join(out_dir, "checkpoint.json"), "w") as fh:
                json.dump(trainer.checkpoint(), fh)
    return result
