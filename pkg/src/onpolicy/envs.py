"""Built-in continuous-control environments.

Three small deterministic tasks stand in for physics-engine benchmarks:

PointMass2D
    Damped point mass on a plane, reward ``-|pos|^2 - 0.01 |a|^2``.
SwingUp1D
    Torque-limited pendulum swing-up.
LinQuad
    Four-dimensional linear system with quadratic cost.

All environments take actions in ``[-1, 1]^act_dim``, emit raw (unnormalized)
observations, and flag the step that hits the step limit as *abandoned*.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError

ENV_IDS = ("PointMass2D", "SwingUp1D", "LinQuad")


@dataclass(frozen=True)
class EnvSpec:
    id: str
    obs_dim: int
    act_dim: int
    step_limit: int

    def __post_init__(self):
        if self.id not in ENV_IDS:
            raise UsageError(f"unknown environment id {self.id!r}")
        if self.obs_dim < 1 or self.act_dim < 1 or self.step_limit < 1:
            raise UsageError("obs_dim, act_dim and step_limit must be >= 1")


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminated: bool = False
    abandoned: bool = False
    frames: int = 1


class Env:
    """Base class; subclasses implement ``_reset_state`` / ``_transition``."""

    spec: EnvSpec

    def __init__(self, step_limit: int | None = None):
        base = self.default_spec()
        self.spec = EnvSpec(base.id, base.obs_dim, base.act_dim,
                            step_limit or base.step_limit)
        self._t = 0
        self._done = True

    @classmethod
    def default_spec(cls) -> EnvSpec:
        raise NotImplementedError

    def reset(self, rng) -> np.ndarray:
        self._reset_state(rng)
        self._t = 0
        self._done = False
        return self._observe()

    def step(self, action) -> StepResult:
        if self._done:
            raise UsageError("step() called on a finished episode; call reset()")
        a = np.asarray(action, dtype=np.float64).reshape(self.spec.act_dim)
        if np.any(np.abs(a) > 1.0 + 1e-12) or not np.all(np.isfinite(a)):
            raise UsageError(f"action {a} outside [-1, 1]")
        reward, terminated = self._transition(a)
        self._t += 1
        abandoned = (not terminated) and self._t >= self.spec.step_limit
        self._done = terminated or abandoned
        return StepResult(self._observe(), float(reward), bool(terminated), bool(abandoned))

    @property
    def done(self) -> bool:
        return self._done

    def _reset_state(self, rng):
        raise NotImplementedError

    def _transition(self, a):
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError


class PointMass2D(Env):
    """vel' = 0.9 vel + 0.1 a; pos' = pos + 0.05 vel'; reward = -|pos'|^2 - 0.01|a|^2."""

    DAMPING = 0.9
    GAIN = 0.1
    DT = 0.05
    ACTION_COST = 0.01

    @classmethod
    def default_spec(cls):
        return EnvSpec("PointMass2D", 4, 2, 100)

    def _reset_state(self, rng):
        self.pos = np.asarray(rng.uniform(-1.0, 1.0, size=2), dtype=np.float64)
        self.vel = np.zeros(2)

    def set_state(self, pos, vel):
        self.pos = np.array(pos, dtype=np.float64)
        self.vel = np.array(vel, dtype=np.float64)
        self._t = 0
        self._done = False

    def _transition(self, a):
        self.vel = self.DAMPING * self.vel + self.GAIN * a
        self.pos = self.pos + self.DT * self.vel
        reward = -float(self.pos @ self.pos) - self.ACTION_COST * float(a @ a)
        return reward, False

    def _observe(self):
        return np.concatenate([self.pos, self.vel])

    @classmethod
    def linear_model(cls):
        """(A, B) with state (pos, vel) such that x' = A x + B a."""
        d, g, dt = cls.DAMPING, cls.GAIN, cls.DT
        A = np.zeros((4, 4))
        A[:2, :2] = np.eye(2)
        A[:2, 2:] = dt * d * np.eye(2)
        A[2:, 2:] = d * np.eye(2)
        B = np.zeros((4, 2))
        B[:2] = dt * g * np.eye(2)
        B[2:] = g * np.eye(2)
        return A, B


class SwingUp1D(Env):
    """Pendulum swing-up; theta = 0 is upright, torque = 2 * action."""

    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0
    DT = 0.05
    G = 10.0

    @classmethod
    def default_spec(cls):
        return EnvSpec("SwingUp1D", 3, 1, 200)

    def _reset_state(self, rng):
        self.theta = float(rng.uniform(-np.pi, np.pi))
        self.theta_dot = float(rng.uniform(-1.0, 1.0))

    def _transition(self, a):
        u = self.MAX_TORQUE * float(a[0])
        th, thdot = self.theta, self.theta_dot
        angle = ((th + np.pi) % (2 * np.pi)) - np.pi
        cost = angle**2 + 0.1 * thdot**2 + 0.001 * u**2
        thdot = thdot + (3 * self.G / 2 * np.sin(th) + 3.0 * u) * self.DT
        thdot = float(np.clip(thdot, -self.MAX_SPEED, self.MAX_SPEED))
        self.theta = th + thdot * self.DT
        self.theta_dot = thdot
        return -cost, False

    def _observe(self):
        return np.array([np.cos(self.theta), np.sin(self.theta), self.theta_dot])


class LinQuad(Env):
    """x' = A x + B a with reward -(|x'|^2 + 0.1 |a|^2); two coupled oscillators."""

    A = np.array([
        [1.0, 0.1, 0.0, 0.0],
        [-0.05, 0.98, 0.02, 0.0],
        [0.0, 0.0, 1.0, 0.1],
        [0.02, 0.0, -0.05, 0.98],
    ])
    B = np.array([
        [0.0, 0.0],
        [0.1, 0.0],
        [0.0, 0.0],
        [0.0, 0.1],
    ])
    ACTION_COST = 0.1

    @classmethod
    def default_spec(cls):
        return EnvSpec("LinQuad", 4, 2, 100)

    def _reset_state(self, rng):
        self.x = np.asarray(rng.uniform(-1.0, 1.0, size=4), dtype=np.float64)

    def _transition(self, a):
        self.x = self.A @ self.x + self.B @ a
        return -float(self.x @ self.x) - self.ACTION_COST * float(a @ a), False

    def _observe(self):
        return self.x.copy()

    @classmethod
    def linear_model(cls):
        return cls.A.copy(), cls.B.copy()


_REGISTRY = {"PointMass2D": PointMass2D, "SwingUp1D": SwingUp1D, "LinQuad": LinQuad}


def make_env(env_id: str, frameskip: int = 1, step_limit: int | None = None):
    try:
        cls = _REGISTRY[env_id]
    except KeyError:
        raise UsageError(f"unknown environment id {env_id!r}; choose from {ENV_IDS}") from None
    env = cls(step_limit=step_limit)
    return FrameSkipWrapper(env, frameskip) if frameskip != 1 else env


class FrameSkipWrapper:
    """Repeats each action ``n`` times and sums the rewards.

    Callers discount with ``gamma ** n``. Repetition stops early when the
    inner episode ends.
    """

    def __init__(self, inner, n: int):
        if int(n) < 1:
            raise UsageError("frame skip must be >= 1")
        self.inner = inner
        self.n = int(n)
        self.spec = inner.spec

    def reset(self, rng):
        return self.inner.reset(rng)

    @property
    def done(self):
        return self.inner.done

    def step(self, action) -> StepResult:
        return frame_skip_step(self, action)


def frame_skip_step(wrapper: FrameSkipWrapper, action) -> StepResult:
    total = 0.0
    res = None
    frames = 0
    for _ in range(wrapper.n):
        res = wrapper.inner.step(action)
        total += res.reward
        frames += 1
        if res.terminated or res.abandoned:
            break
    return StepResult(res.obs, total, res.terminated, res.abandoned, frames)


class VecEnv:
    """Synchronously stepped environments that persist across iterations.

    Episodes that end are reset inside :meth:`step`; the returned observation
    is then the first observation of the new episode while the flags belong to
    the transition that ended the old one.
    """

    def __init__(self, envs, rng):
        self.envs = list(envs)
        self.rng = rng
        self.obs = np.stack([env.reset(rng) for env in self.envs])

    @property
    def num_envs(self):
        return len(self.envs)

    def step(self, actions):
        return vec_step(self, actions)


def vec_step(vec: VecEnv, actions) -> list[StepResult]:
    actions = np.asarray(actions, dtype=np.float64)
    act_dim = vec.envs[0].spec.act_dim
    if actions.shape != (len(vec.envs), act_dim):
        raise UsageError(
            f"expected actions of shape {(len(vec.envs), act_dim)}, got {actions.shape}")
    results = []
    for i, env in enumerate(vec.envs):
        res = env.step(actions[i])
        if res.terminated or res.abandoned:
            res.obs = env.reset(vec.rng)
        vec.obs[i] = res.obs
        results.append(res)
    return results


def lqr_value_matrices(A, B, Q, R, horizon):
    """Finite-horizon Riccati recursion for reward -(x'ᵀQx' + aᵀRa).

    Returns the cost-to-go matrices ``P[t]`` (``t = 0..horizon``) of the
    unconstrained problem; ``x0ᵀ P[0] x0`` is the minimal total cost.
    """
    n = A.shape[0]
    P = [np.zeros((n, n))]
    for _ in range(horizon):
        M = Q + P[0]
        K = np.linalg.solve(B.T @ M @ B + R, B.T @ M @ A)
        P.insert(0, A.T @ M @ A - A.T @ M @ B @ K)
    return P


def pointmass_lqr_bound(horizon: int = 100) -> float:
    """Expected return of the unconstrained LQR controller (ignores |a| <= 1).

    This upper-bounds the return of any policy, including bounded ones.
    """
    A, B = PointMass2D.linear_model()
    Q = np.zeros((4, 4))
    Q[:2, :2] = np.eye(2)
    R = PointMass2D.ACTION_COST * np.eye(2)
    P0 = lqr_value_matrices(A, B, Q, R, horizon)[0]
    # pos ~ U[-1, 1]^2 has variance 1/3 per coordinate, vel = 0
    return -float(np.trace(P0[:2, :2]) / 3.0)


def pointmass_optimal_cost_1d(p0: float, horizon: int = 100) -> float:
    """Minimal cost of one PointMass2D axis from (p0, 0) with |a| <= 1.

    The system is deterministic so the optimal open-loop sequence is optimal
    among all policies; it solves a bounded linear least-squares problem.
    """
    from scipy.optimize import lsq_linear

    G = _pointmass_response(horizon)
    w = np.sqrt(PointMass2D.ACTION_COST)
    M = np.vstack([G, w * np.eye(horizon)])
    b = -np.concatenate([np.full(horizon, p0), np.zeros(horizon)])
    res = lsq_linear(M, b, bounds=(-1.0, 1.0), method="bvls", tol=1e-12)
    return float(2.0 * res.cost)


def _pointmass_response(horizon):
    d, g, dt = PointMass2D.DAMPING, PointMass2D.GAIN, PointMass2D.DT
    # position at step t (1-based) after a unit action at step j <= t
    G = np.zeros((horizon, horizon))
    for j in range(horizon):
        v = 0.0
        p = 0.0
        for t in range(j, horizon):
            v = d * v + (g if t == j else 0.0)
            p = p + dt * v
            G[t, j] = p
    return G


def pointmass_optimal_return(horizon: int = 100, nodes: int = 128) -> float:
    """Expected optimal return of PointMass2D under its reset distribution.

    The two axes decouple, so the answer is twice the 1-D expectation over
    ``p0 ~ U[-1, 1]``, integrated with Gauss-Legendre quadrature on [0, 1]
    (the 1-D cost is even in p0).
    """
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    expected = sum(wi * pointmass_optimal_cost_1d(xi, horizon) for xi, wi in zip(x, w))
    return -2.0 * float(expected)
