"""Random-search studies over conditional choice spaces.

A space is a list of :class:`ChoiceNode`; each node lists the values of one
choice and, optionally, sub-choice nodes that are sampled only when the parent
takes a given value. Unlisted choices keep the base configuration values.

Each (config, seed) job appends one JSON line to the records file as soon as
it finishes, so an interrupted study can be resumed without retraining
completed jobs.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from .config import (ChoiceConfig, RunSettings, config_from_dict, is_active,
                     parse_value, resolve_key)
from .errors import ConfigError, UsageError


@dataclass
class ChoiceNode:
    name: str
    values: list
    sub: dict = field(default_factory=dict)   # parent value -> list[ChoiceNode]

    def __post_init__(self):
        self.name = resolve_key(self.name)
        if not self.values:
            raise ConfigError(f"choice {self.name!r} has no values", self.name)
        self.values = [parse_value(self.name, v) for v in self.values]
        fixed = {}
        for key, nodes in self.sub.items():
            value = parse_value(self.name, key)
            if value not in self.values:
                raise ConfigError(f"sub-choices under {self.name}={key!r}, which is not a "
                                  "listed value", self.name)
            fixed[value] = [n if isinstance(n, ChoiceNode) else node_from_dict(n) for n in nodes]
        self.sub = fixed


@dataclass
class ChoiceSpace:
    nodes: list
    base: dict = field(default_factory=dict)
    name: str = "custom"

    def names(self):
        out = []

        def walk(nodes):
            for n in nodes:
                out.append(n.name)
                for subs in n.sub.values():
                    walk(subs)
        walk(self.nodes)
        return out

    def base_config(self) -> ChoiceConfig:
        return config_from_dict(self.base) if self.base else ChoiceConfig()


def node_from_dict(d) -> ChoiceNode:
    try:
        return ChoiceNode(d["name"], list(d["values"]), dict(d.get("sub", {})))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed choice node {d!r}: {exc}", None) from None


def space_from_dict(d) -> ChoiceSpace:
    if not isinstance(d, dict) or "choices" not in d:
        raise ConfigError("a space needs a 'choices' list", None)
    nodes = [node_from_dict(n) for n in d["choices"]]
    space = ChoiceSpace(nodes, dict(d.get("base", {})), d.get("name", "custom"))
    space.base_config()  # validate the base eagerly
    return space


def space_to_dict(space: ChoiceSpace) -> dict:
    def enc(n):
        out = {"name": n.name, "values": list(n.values)}
        if n.sub:
            out["sub"] = {str(k): [enc(c) for c in v] for k, v in n.sub.items()}
        return out
    return {"name": space.name, "base": dict(space.base), "choices": [enc(n) for n in space.nodes]}


def load_space(path) -> ChoiceSpace:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"space file {path}: {exc}", None) from None
    return space_from_dict(data)


def sample_assignment(space: ChoiceSpace, rng) -> dict:
    """Draw values uniformly and independently; sub-choices only under their parent value."""
    out = {}

    def walk(nodes):
        for n in nodes:
            value = n.values[int(rng.integers(len(n.values)))]
            out[n.name] = value
            if value in n.sub:
                walk(n.sub[value])
    walk(space.nodes)
    return out


def sample_config(space: ChoiceSpace, rng) -> ChoiceConfig:
    return config_from_dict(sample_assignment(space, rng), space.base_config()).canonical()


# -- presets -------------------------------------------------------------------

def _n(name, values, **sub):
    return {"name": name, "values": values, "sub": sub} if sub else {"name": name, "values": values}


LR5 = [3e-5, 1e-4, 3e-4, 1e-3, 3e-3]
LR4 = [3e-5, 1e-4, 3e-4, 1e-3]
EPS6 = [1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4]
KL5 = [0.005, 0.01, 0.02, 0.04, 0.08]
PEN6 = [0.003, 0.01, 0.03, 0.1, 0.3, 1.0]
REGS = ["kl_mu_pi", "kl_pi_mu", "kl_ref_pi", "decoupled_kl_mu_pi", "entropy"]

PRESETS = {
    "losses": [
        _n("numepochsperstep", [1, 3, 10]),
        {"name": "policyloss", "values": ["AWR", "PG", "PPO", "RPA", "V-MPO", "V-Trace"], "sub": {
            "AWR": [_n("awrbeta", [1e-4, 3e-4, 1e-3, 3e-3, 0.01, 0.03, 0.1, 0.3]),
                    _n("awrw", [1.1, 1.2, 1.3, 1.5])],
            "PPO": [_n("ppoepsilon", [0.1, 0.2, 0.3, 0.5])],
            "V-MPO": [_n("vmpoeps", [1e-4, 3e-4, 1e-3, 3e-3, 0.01, 0.03, 0.1, 0.3, 1.0])],
            "V-Trace": [_n("vtracelossrho", [1.0, 1.2, 1.5, 2.0])],
        }},
        _n("adamlr", LR5),
    ],
    "arch": [
        _n("actionpost", ["clip", "tanh"]),
        _n("valueinit", [0.001, 0.01, 0.1, 1.0]),
        _n("stdind", [False, True]),
        _n("policyinit", [0.001, 0.01, 0.1, 1.0]),
        _n("stdtransform", ["safe_exp", "softplus"]),
        _n("initialstd", [0.1, 0.5, 1.0, 2.0]),
        _n("init", ["glorot_normal", "glorot_uniform", "he_normal", "he_uniform",
                    "lecun_normal", "lecun_uniform", "orthogonal", "orthogonal_1.41"]),
        {"name": "mlpshared", "values": ["separate", "shared"], "sub": {
            "separate": [_n("policywidth", [16, 32, 64, 128, 256, 512]),
                         _n("policydepth", [1, 2, 4, 8]),
                         _n("valuewidth", [16, 32, 64, 128, 256, 512]),
                         _n("valuedepth", [1, 2, 4, 8])],
            "shared": [_n("sharedwidth", [16, 32, 64, 128, 256, 512]),
                       _n("shareddepth", [1, 2, 4, 8]),
                       _n("baselinecost", [0.001, 0.1, 1.0, 10.0, 100.0])],
        }},
        _n("minstd", [0.0, 0.01, 0.1]),
        _n("adamlr", LR4),
        _n("activation", ["elu", "leaky_relu", "relu", "sigmoid", "swish", "tanh"]),
    ],
    "stability": [
        _n("ppoepsilon", [0.1, 0.2, 0.3, 0.5]),
        {"name": "norminput", "values": ["average", "none"], "sub": {
            "average": [_n("clipinput", [1.0, 2.0, 5.0, 10.0, None])]}},
        _n("clipgrad", [0.5, 1.0, 2.0, 5.0, None]),
        _n("normadv", [False, True]),
        _n("adamlr", LR4),
        _n("normreward", ["average", "none"]),
    ],
    "advantages": [
        _n("numenvs", [64, 128, 256]),
        {"name": "valueloss", "values": ["Huber", "MSE"], "sub": {
            "Huber": [_n("huberdelta", [0.001, 0.01, 0.1, 1.0])]}},
        _n("ppovalueclip", [0.001, 0.01, 0.1, 1.0, None]),
        {"name": "advantageestimator", "values": ["GAE", "N-step", "V-Trace"], "sub": {
            "GAE": [_n("gaelambda", [0.8, 0.9, 0.95, 0.99])],
            "N-step": [_n("nstep", [1, 3, 10, 1000000])],
            "V-Trace": [_n("vtraceaelambda", [0.8, 0.9, 0.95, 0.99, 1.0]),
                        _n("vtraceaecrho", [1.0, 1.2, 1.5, 2.0])],
        }},
        _n("adamlr", LR5),
    ],
    "setup": [
        _n("stepsize", [512, 1024, 2048, 4096]),
        _n("batchhandling", ["fixed_trajectories", "shuffle_trajectories",
                             "shuffle_transitions", "shuffle_transitions_recompute"]),
        _n("numepochsperstep", [1, 3, 10]),
        _n("numenvs", [64, 128, 256]),
        _n("adamlr", LR5),
        _n("batchsize", [64, 128, 256]),
    ],
    "time": [
        _n("discount", [0.95, 0.97, 0.99, 0.999]),
        _n("frameskip", [1, 2, 5]),
        _n("handleabandon", [False, True]),
        _n("adamlr", LR4),
    ],
    "optimizers": [
        _n("lrdecay", [0.0, 1.0]),
        {"name": "optimizer", "values": ["Adam", "RMSProp"], "sub": {
            "Adam": [_n("adammom", [0.0, 0.9]), _n("adameps", EPS6), _n("adamlr", LR4)],
            "RMSProp": [_n("rmscent", [False, True]), _n("rmsmom", [0.0, 0.9]),
                        _n("rmseps", EPS6), _n("rmslr", LR4)],
        }},
    ],
    "regularizers": [
        {"name": "regularizationtype", "values": ["constraint", "none", "penalty"], "sub": {
            "constraint": [{"name": "regularizerconstraint", "values": REGS, "sub": {
                "kl_mu_pi": [_n("regularizerconstraintklmupi", KL5)],
                "kl_pi_mu": [_n("regularizerconstraintklpimu", KL5)],
                "kl_ref_pi": [_n("regularizerconstraintklrefpi", [10.0, 20.0, 40.0, 80.0, 160.0])],
                "decoupled_kl_mu_pi": [
                    _n("regularizerconstraintklmupimean", KL5),
                    _n("regularizerconstraintklmupistd",
                       [5e-5, 1.25e-4, 2.5e-4, 5e-4, 1e-3, 2e-3, 4e-3])],
                "entropy": [_n("regularizerconstraintentropy", [0.0, -5.0, -10.0, -15.0])],
            }}],
            "penalty": [{"name": "regularizerpenalty", "values": REGS, "sub": {
                "kl_mu_pi": [_n("regularizerpenaltyklmupi", PEN6)],
                "kl_pi_mu": [_n("regularizerpenaltyklpimu", PEN6)],
                "kl_ref_pi": [_n("regularizerpenaltyklrefpi",
                                 [3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3])],
                "decoupled_kl_mu_pi": [
                    _n("regularizerpenaltyklmupimean", PEN6),
                    _n("regularizerpenaltyklmupistd",
                       [0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0])],
                "entropy": [_n("regularizerpenaltyentropy",
                               [1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3])],
            }}],
        }},
        _n("adamlr", LR5),
    ],
    # small directional study at desk scale: multi-epoch PG vs PPO
    "mini": [
        _n("policyloss", ["PG", "PPO"]),
        _n("numepochsperstep", [1, 10]),
        _n("adamlr", [1e-4, 3e-4, 1e-3]),
    ],
}

DESK_BASE = {"numenvs": 8, "stepsize": 512, "batchsize": 64, "numepochsperstep": 3}


def preset(name: str, desk: bool = False) -> ChoiceSpace:
    """Built-in design; ``desk=True`` starts from the desk-scale base (8 envs,
    512 steps, 3 epochs) instead of the full defaults."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", name)
    base = dict(DESK_BASE) if desk else {}
    return space_from_dict({"name": name, "base": base, "choices": PRESETS[name]})


# -- running -------------------------------------------------------------------

@dataclass
class StudyRecord:
    config: ChoiceConfig
    scores: list
    median_score: float
    env: str = "PointMass2D"
    config_index: int = 0
    failed_seeds: int = 0

    def value(self, choice):
        return getattr(self.config, choice)


def job_seed(study_seed: int, config_index: int, seed_index: int) -> int:
    ss = np.random.SeedSequence([int(study_seed), int(config_index), int(seed_index)])
    return int(ss.generate_state(1)[0])


def _run_job(job):
    from .trainer import Trainer
    cfg_dict, run_kw, meta = job
    cfg = config_from_dict(cfg_dict)
    run = RunSettings(**run_kw)
    line = dict(meta)
    try:
        res = Trainer(cfg, run).train()
        line.update(score=res.score, failed=res.failed, failure=res.failure,
                    curve=[[s, r] for s, r in res.curve])
    except (ConfigError, UsageError) as exc:
        line.update(score=None, failed=True, failure=f"{type(exc).__name__}: {exc}", curve=[])
    return line


def read_lines(path):
    """Parse a records file, skipping a torn trailing line."""
    out = []
    if not os.path.exists(path):
        return out
    with open(path) as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw:
                continue
            try:
                out.append(json.loads(raw))
            except json.JSONDecodeError:
                continue
    return out


def run_study(space: ChoiceSpace, n_configs: int, seeds: int, budget: int, records_path,
              *, study_seed: int = 0, workers: int = 1, env: str = "PointMass2D",
              eval_every: int = 10_000, eval_episodes: int = 20, progress=None):
    """Sample ``n_configs`` configurations, train each with ``seeds`` seeds and
    append one JSON line per finished job to ``records_path``."""
    if n_configs < 1 or seeds < 1:
        raise UsageError("n_configs and seeds must be >= 1")
    rng = np.random.default_rng(study_seed)
    configs = []
    for _ in range(n_configs):
        assignment = sample_assignment(space, rng)
        try:
            configs.append(config_from_dict(assignment, space.base_config()).canonical())
        except ConfigError as exc:
            configs.append(exc)
    done = {(d["config_index"], d["seed_index"]) for d in read_lines(records_path)
            if d.get("study_seed") == study_seed}
    jobs = []
    for i, cfg in enumerate(configs):
        for s in range(seeds):
            if (i, s) in done:
                continue
            meta = {"study_seed": study_seed, "config_index": i, "seed_index": s,
                    "seed": job_seed(study_seed, i, s), "env": env, "budget": budget}
            if isinstance(cfg, ConfigError):
                jobs.append(("invalid", dict(meta, score=None, failed=True,
                                             failure=f"ConfigError: {cfg}", config=None,
                                             config_hash=None, curve=[])))
                continue
            meta.update(config=cfg.active_dict(), config_hash=cfg.config_hash())
            run_kw = {"env": env, "budget": budget, "eval_every": eval_every,
                      "eval_episodes": eval_episodes, "seed": meta["seed"], "checkpoint": False}
            jobs.append((cfg.active_dict(), run_kw, meta))

    os.makedirs(os.path.dirname(os.path.abspath(records_path)), exist_ok=True)
    torn = False
    if os.path.exists(records_path) and os.path.getsize(records_path) > 0:
        with open(records_path, "rb") as fh:
            fh.seek(-1, os.SEEK_END)
            torn = fh.read(1) != b"\n"
    with open(records_path, "a") as fh:
        if torn:
            fh.write("\n")  # terminate a line cut short by an interrupted run
        def emit(line):
            fh.write(json.dumps(line, sort_keys=True) + "\n")
            fh.flush()
            if progress is not None:
                progress(line)

        runnable = [j for j in jobs if j[0] != "invalid"]
        for j in jobs:
            if j[0] == "invalid":
                emit(j[1])
        if workers <= 1:
            for j in runnable:
                emit(_run_job(j))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_run_job, j) for j in runnable]
                for fut in as_completed(futures):
                    emit(fut.result())
    return load_records(records_path, study_seed=study_seed)


def records_from_lines(lines, env=None) -> list:
    """Group job lines into one :class:`StudyRecord` per (env, config)."""
    groups = {}
    for d in lines:
        if d.get("config") is None or (env is not None and d.get("env") != env):
            continue
        key = (d.get("env"), d.get("study_seed"), d["config_index"], d["config_hash"])
        groups.setdefault(key, []).append(d)
    out = []
    for key in sorted(groups, key=lambda k: (str(k[0]), str(k[1]), k[2], k[3])):
        lines_ = sorted(groups[key], key=lambda d: d["seed_index"])
        scores = [d["score"] for d in lines_ if d.get("score") is not None]
        if not scores:
            continue
        cfg = config_from_dict(lines_[0]["config"])
        out.append(StudyRecord(cfg.canonical(), scores, float(np.median(scores)), key[0], key[2],
                               sum(bool(d.get("failed")) for d in lines_)))
    return out


def load_records(path, env=None, study_seed=None) -> list:
    lines = read_lines(path)
    if study_seed is not None:
        lines = [d for d in lines if d.get("study_seed") == study_seed]
    return records_from_lines(lines, env)


def record_is_active(record: StudyRecord, choice: str) -> bool:
    return is_active(record.config, choice)
