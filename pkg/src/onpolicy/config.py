"""Choice configuration: one field per algorithmic choice.

Defaults reproduce the baseline agent (close to PPO). Sub-choices are only
*active* when their parent choice takes a specific value; :meth:`ChoiceConfig.canonical`
clears inactive ones so that serialized configs contain active choices only.

Text format
-----------
One ``key = value`` per line with dotted keys grouped by parent choice, e.g.::

    # comments and blank lines are ignored
    policyloss.kind = PPO
    policyloss.ppoepsilon = 0.2
    run.env = PointMass2D

Bare choice names (``ppoepsilon = 0.2``) are accepted as aliases.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

from .errors import ConfigError

BATCH_HANDLING = (
    "fixed_trajectories",
    "shuffle_trajectories",
    "shuffle_transitions",
    "shuffle_transitions_recompute",
)


@dataclass
class ChoiceConfig:
    # data collection and optimization loop
    numenvs: int = 256
    stepsize: int = 2048
    numepochsperstep: int = 10
    batchsize: int = 64
    batchhandling: str = "shuffle_transitions"
    # advantage estimation
    advantageestimator: str = "GAE"
    gaelambda: float = 0.95
    nstep: int = 10
    vtraceaelambda: float = 0.95
    vtraceaecrho: float = 1.0
    valueloss: str = "MSE"
    huberdelta: float = 1.0
    ppovalueclip: float | None = 0.2
    # policy losses
    policyloss: str = "PPO"
    ppoepsilon: float = 0.2
    vtracelossrho: float = 1.0
    awrbeta: float = 0.1
    awrw: float = 1.3
    vmpoeps: float = 0.1
    # timesteps
    discount: float = 0.99
    frameskip: int = 1
    handleabandon: bool = False
    # optimizers
    optimizer: str = "Adam"
    adamlr: float = 3e-4
    adammom: float = 0.9
    adameps: float = 1e-7
    rmslr: float = 3e-4
    rmsmom: float = 0.0
    rmseps: float = 1e-7
    rmscent: bool = False
    rmsdecay: float = 0.9
    lrdecay: float = 0.0
    # regularization
    regularizationtype: str = "none"
    regularizerpenalty: str = "entropy"
    regularizerconstraint: str = "kl_mu_pi"
    regularizerpenaltyentropy: float = 1e-3
    regularizerpenaltyklmupi: float = 0.1
    regularizerpenaltyklpimu: float = 0.1
    regularizerpenaltyklrefpi: float = 1e-4
    regularizerpenaltyklmupimean: float = 0.1
    regularizerpenaltyklmupistd: float = 10.0
    regularizerconstraintentropy: float = -5.0
    regularizerconstraintklmupi: float = 0.02
    regularizerconstraintklpimu: float = 0.02
    regularizerconstraintklrefpi: float = 40.0
    regularizerconstraintklmupimean: float = 0.02
    regularizerconstraintklmupistd: float = 5e-4
    # network architecture
    mlpshared: str = "separate"
    policywidth: int = 64
    policydepth: int = 2
    valuewidth: int = 64
    valuedepth: int = 2
    sharedwidth: int = 64
    shareddepth: int = 2
    baselinecost: float = 1.0
    activation: str = "tanh"
    init: str = "orthogonal_1.41"
    policyinit: float = 0.01
    valueinit: float = 1.0
    # action distribution
    stdind: bool = True
    stdtransform: str = "safe_exp"
    initialstd: float = 1.0
    minstd: float = 1e-3
    actionpost: str = "clip"
    # normalization and clipping
    norminput: str = "average"
    clipinput: float | None = 10.0
    normreward: str = "average"
    normadv: bool = False
    clipgrad: float | None = 0.5

    def canonical(self) -> "ChoiceConfig":
        return canonicalize(self)

    def active_dict(self) -> dict:
        cfg = canonicalize(self)
        return {f.name: getattr(cfg, f.name) for f in fields(cfg) if is_active(cfg, f.name)}

    def replace(self, **kw) -> "ChoiceConfig":
        return dataclasses.replace(self, **kw)

    def config_hash(self) -> str:
        blob = json.dumps(self.active_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# Sub-choice -> (parent choice, parent value) under which it is active.
PARENT = {
    "gaelambda": ("advantageestimator", "GAE"),
    "nstep": ("advantageestimator", "N-step"),
    "vtraceaelambda": ("advantageestimator", "V-Trace"),
    "vtraceaecrho": ("advantageestimator", "V-Trace"),
    "huberdelta": ("valueloss", "Huber"),
    "ppoepsilon": ("policyloss", "PPO"),
    "vtracelossrho": ("policyloss", "V-Trace"),
    "awrbeta": ("policyloss", "AWR"),
    "awrw": ("policyloss", "AWR"),
    "vmpoeps": ("policyloss", "V-MPO"),
    "adamlr": ("optimizer", "Adam"),
    "adammom": ("optimizer", "Adam"),
    "adameps": ("optimizer", "Adam"),
    "rmslr": ("optimizer", "RMSProp"),
    "rmsmom": ("optimizer", "RMSProp"),
    "rmseps": ("optimizer", "RMSProp"),
    "rmscent": ("optimizer", "RMSProp"),
    "rmsdecay": ("optimizer", "RMSProp"),
    "regularizerpenalty": ("regularizationtype", "penalty"),
    "regularizerconstraint": ("regularizationtype", "constraint"),
    "regularizerpenaltyentropy": ("regularizerpenalty", "entropy"),
    "regularizerpenaltyklmupi": ("regularizerpenalty", "kl_mu_pi"),
    "regularizerpenaltyklpimu": ("regularizerpenalty", "kl_pi_mu"),
    "regularizerpenaltyklrefpi": ("regularizerpenalty", "kl_ref_pi"),
    "regularizerpenaltyklmupimean": ("regularizerpenalty", "decoupled_kl_mu_pi"),
    "regularizerpenaltyklmupistd": ("regularizerpenalty", "decoupled_kl_mu_pi"),
    "regularizerconstraintentropy": ("regularizerconstraint", "entropy"),
    "regularizerconstraintklmupi": ("regularizerconstraint", "kl_mu_pi"),
    "regularizerconstraintklpimu": ("regularizerconstraint", "kl_pi_mu"),
    "regularizerconstraintklrefpi": ("regularizerconstraint", "kl_ref_pi"),
    "regularizerconstraintklmupimean": ("regularizerconstraint", "decoupled_kl_mu_pi"),
    "regularizerconstraintklmupistd": ("regularizerconstraint", "decoupled_kl_mu_pi"),
    "policywidth": ("mlpshared", "separate"),
    "policydepth": ("mlpshared", "separate"),
    "valuewidth": ("mlpshared", "separate"),
    "valuedepth": ("mlpshared", "separate"),
    "sharedwidth": ("mlpshared", "shared"),
    "shareddepth": ("mlpshared", "shared"),
    "baselinecost": ("mlpshared", "shared"),
    "clipinput": ("norminput", "average"),
}

REG_KINDS = ("entropy", "kl_mu_pi", "kl_pi_mu", "kl_ref_pi", "decoupled_kl_mu_pi")

ALLOWED = {
    "batchhandling": BATCH_HANDLING,
    "advantageestimator": ("GAE", "N-step", "V-Trace"),
    "valueloss": ("MSE", "Huber"),
    "policyloss": ("PG", "V-Trace", "PPO", "AWR", "V-MPO", "RPA"),
    "optimizer": ("Adam", "RMSProp"),
    "regularizationtype": ("none", "penalty", "constraint"),
    "regularizerpenalty": REG_KINDS,
    "regularizerconstraint": REG_KINDS,
    "mlpshared": ("separate", "shared"),
    "activation": ("tanh", "relu", "elu", "leaky_relu", "sigmoid", "swish"),
    "init": ("glorot_normal", "glorot_uniform", "he_normal", "he_uniform", "lecun_normal",
             "lecun_uniform", "orthogonal", "orthogonal_1.41"),
    "stdtransform": ("safe_exp", "softplus"),
    "actionpost": ("clip", "tanh"),
    "norminput": ("average", "none"),
    "normreward": ("average", "none"),
}

NULLABLE = ("ppovalueclip", "clipinput", "clipgrad")

GROUP = {
    "numenvs": "setup", "stepsize": "setup", "numepochsperstep": "setup",
    "batchsize": "setup", "batchhandling": "setup",
    "advantageestimator": "advantageestimator", "gaelambda": "advantageestimator",
    "nstep": "advantageestimator", "vtraceaelambda": "advantageestimator",
    "vtraceaecrho": "advantageestimator",
    "valueloss": "valueloss", "huberdelta": "valueloss", "ppovalueclip": "valueloss",
    "policyloss": "policyloss", "ppoepsilon": "policyloss", "vtracelossrho": "policyloss",
    "awrbeta": "policyloss", "awrw": "policyloss", "vmpoeps": "policyloss",
    "discount": "timesteps", "frameskip": "timesteps", "handleabandon": "timesteps",
    "regularizationtype": "regularization",
    "stdind": "actiondist", "stdtransform": "actiondist", "initialstd": "actiondist",
    "minstd": "actiondist", "actionpost": "actiondist",
    "norminput": "normalization", "clipinput": "normalization", "normreward": "normalization",
    "normadv": "normalization", "clipgrad": "normalization",
}
# the choice that names its own group is written as ``<group>.kind``
KIND_KEYS = {"advantageestimator", "valueloss", "policyloss", "optimizer"}


def _group_of(name):
    if name in GROUP:
        return GROUP[name]
    if name.startswith("regularizer"):
        return "regularization"
    if name in ("optimizer",) or name.startswith(("adam", "rms")) or name == "lrdecay":
        return "optimizer"
    return "network"


_DEFAULTS = ChoiceConfig()
FIELD_TYPES = {f.name: type(getattr(_DEFAULTS, f.name)) for f in fields(ChoiceConfig)}
FIELD_TYPES.update({n: float for n in NULLABLE})


def dotted_key(name: str) -> str:
    group = _group_of(name)
    if name == group and name in KIND_KEYS:
        return f"{group}.kind"
    if name == "regularizationtype":
        return "regularization.type"
    return f"{group}.{name}"


DOTTED = {dotted_key(f.name): f.name for f in fields(ChoiceConfig)}


def is_active(cfg: ChoiceConfig, name: str) -> bool:
    while name in PARENT:
        parent, value = PARENT[name]
        if getattr(cfg, parent) != value:
            return False
        name = parent
    return True


def canonicalize(cfg: ChoiceConfig) -> ChoiceConfig:
    out = dataclasses.replace(cfg)
    for f in fields(out):
        name = f.name
        if not is_active(out, name):
            setattr(out, name, None)
        elif getattr(out, name) is None and name not in NULLABLE:
            setattr(out, name, getattr(_DEFAULTS, name))
    return out


def parse_value(name: str, text):
    """Convert ``text`` to the declared type of choice ``name``."""
    if name not in FIELD_TYPES:
        raise ConfigError(f"unknown configuration key {name!r}", name)
    typ = FIELD_TYPES[name]
    if not isinstance(text, str):
        value = text
    else:
        s = text.strip()
        if name in NULLABLE and s.lower() in ("none", "null", ""):
            return None
        try:
            if typ is bool:
                low = s.lower()
                if low not in ("true", "false"):
                    raise ValueError(s)
                value = low == "true"
            elif typ is int:
                value = int(float(s)) if float(s).is_integer() else int(s)
            elif typ is float:
                value = float(s)
            else:
                value = s
        except ValueError:
            raise ConfigError(f"invalid value {text!r} for {name}", name) from None
    if value is None:
        if name in NULLABLE:
            return None
        raise ConfigError(f"{name} may not be None", name)
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        value = float(value)
    if typ is int and isinstance(value, float) and value.is_integer():
        value = int(value)
    if typ is bool and not isinstance(value, bool):
        raise ConfigError(f"{name} expects true/false, got {value!r}", name)
    if name in ALLOWED:
        matches = [a for a in ALLOWED[name] if a.lower() == str(value).lower()]
        if not matches:
            raise ConfigError(f"{name} must be one of {ALLOWED[name]}, got {value!r}", name)
        value = matches[0]
    return value


def resolve_key(key: str) -> str:
    key = key.strip()
    if key in DOTTED:
        return DOTTED[key]
    if key in FIELD_TYPES:
        return key
    raise ConfigError(f"unknown configuration key {key!r}", key)


def validate(cfg: ChoiceConfig) -> ChoiceConfig:
    c = canonicalize(cfg)
    for name in ("numenvs", "stepsize", "numepochsperstep", "batchsize", "frameskip"):
        if getattr(c, name) < 1:
            raise ConfigError(f"{name} must be >= 1", name)
    if c.stepsize % c.numenvs:
        raise ConfigError("stepsize must be divisible by numenvs", "stepsize")
    if c.stepsize % c.batchsize:
        raise ConfigError("batchsize must divide stepsize", "batchsize")
    frag = c.stepsize // c.numenvs
    if c.batchhandling in ("fixed_trajectories", "shuffle_trajectories") and c.batchsize % frag:
        raise ConfigError(
            f"batchsize {c.batchsize} must be a multiple of the fragment length {frag} "
            f"for {c.batchhandling}", "batchsize")
    if not 0.0 < c.discount <= 1.0:
        raise ConfigError("discount must lie in (0, 1]", "discount")
    if c.initialstd <= c.minstd:
        raise ConfigError("initialstd must exceed minstd", "initialstd")
    for name in ALLOWED:
        value = getattr(c, name)
        if value is not None and value not in ALLOWED[name]:
            raise ConfigError(f"{name} must be one of {ALLOWED[name]}", name)
    return c


@dataclass
class RunSettings:
    """Non-choice run parameters (``run.*`` keys)."""

    env: str = "PointMass2D"
    budget: int = 200_000
    eval_every: int = 10_000
    eval_episodes: int = 20
    seed: int = 0
    checkpoint: bool = True


RUN_TYPES = {f.name: f.type for f in fields(RunSettings)}


def _parse_run(key, text):
    default = getattr(RunSettings(), key)
    try:
        if isinstance(default, bool):
            if text.strip().lower() not in ("true", "false"):
                raise ValueError(text)
            return text.strip().lower() == "true"
        if isinstance(default, int):
            return int(float(text))
        return text.strip()
    except ValueError:
        raise ConfigError(f"invalid value {text!r} for run.{key}", f"run.{key}") from None


def parse_config_text(text: str, base: ChoiceConfig | None = None):
    """Parse the text format into ``(ChoiceConfig, RunSettings)``."""
    overrides = {}
    run = RunSettings()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", None)
        key, value = (p.strip() for p in line.split("=", 1))
        if key.startswith("run."):
            name = key[4:]
            if name not in RUN_TYPES:
                raise ConfigError(f"unknown configuration key {key!r}", key)
            setattr(run, name, _parse_run(name, value))
            continue
        name = resolve_key(key)
        overrides[name] = parse_value(name, value)
    cfg = dataclasses.replace(base or ChoiceConfig(), **overrides)
    return validate(cfg), run


def load_config(path, base: ChoiceConfig | None = None):
    with open(path) as fh:
        return parse_config_text(fh.read(), base)


def _format(value):
    if value is None:
        return "None"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(cfg: ChoiceConfig, run: RunSettings | None = None) -> str:
    lines = []
    for name, value in cfg.active_dict().items():
        lines.append(f"{dotted_key(name)} = {_format(value)}")
    if run is not None:
        for f in fields(run):
            lines.append(f"run.{f.name} = {_format(getattr(run, f.name))}")
    return "\n".join(lines) + "\n"


def config_from_dict(d: dict, base: ChoiceConfig | None = None) -> ChoiceConfig:
    """Build a config from (possibly sparse) choice-name -> value overrides."""
    overrides = {}
    for key, value in d.items():
        name = resolve_key(key)
        overrides[name] = parse_value(name, value)
    return validate(dataclasses.replace(base or ChoiceConfig(), **overrides))


def default_config_text() -> str:
    return config_to_text(ChoiceConfig(), RunSettings())


def desk_config(**kw) -> ChoiceConfig:
    """The default configuration scaled to desk budgets (8 envs, 512 steps, 3 epochs)."""
    base = dict(numenvs=8, stepsize=512, batchsize=64, numepochsperstep=3)
    base.update(kw)
    return validate(ChoiceConfig(**base))


__all__ = [
    "ChoiceConfig", "RunSettings", "PARENT", "ALLOWED", "NULLABLE", "BATCH_HANDLING",
    "is_active", "canonicalize", "validate", "parse_value", "parse_config_text",
    "load_config", "config_to_text", "config_from_dict", "dotted_key", "default_config_text",
    "desk_config",
]
