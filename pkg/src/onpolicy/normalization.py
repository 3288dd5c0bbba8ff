"""Running moments, observation/value normalization and gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STD_FLOOR = 1e-6
ADV_STD_FLOOR = 1e-8


@dataclass
class RunningMoments:
    """Streaming mean and population variance (Chan et al. parallel merge)."""

    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def zeros(cls, shape=()):
        return cls(0, np.zeros(shape), np.zeros(shape))

    @property
    def var(self):
        if self.count == 0:
            return np.ones_like(self.mean)
        return self.m2 / self.count

    @property
    def std(self):
        return np.sqrt(self.var)

    def scale(self):
        """max(std, 1e-6), or 1 while no data has been seen."""
        return np.maximum(self.std, STD_FLOOR)

    def copy(self):
        return RunningMoments(self.count, self.mean.copy(), self.m2.copy())

    def to_dict(self):
        return {"count": self.count, "mean": self.mean.tolist(), "m2": self.m2.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["count"]), np.asarray(d["mean"], float), np.asarray(d["m2"], float))


def update_moments(stats: RunningMoments, batch) -> RunningMoments:
    """Merge a batch (leading axis = samples) into ``stats`` in place."""
    x = np.asarray(batch, dtype=np.float64)
    x = x.reshape((-1,) + stats.mean.shape)
    n_b = x.shape[0]
    if n_b == 0:
        return stats
    mean_b = x.mean(axis=0)
    m2_b = ((x - mean_b) ** 2).sum(axis=0)
    n_a = stats.count
    n = n_a + n_b
    delta = mean_b - stats.mean
    stats.mean = stats.mean + delta * (n_b / n)
    stats.m2 = stats.m2 + m2_b + delta * delta * (n_a * n_b / n)
    stats.count = n
    return stats


def normalize_obs(stats: RunningMoments, obs, o_max=None):
    if stats.count == 0:
        out = np.asarray(obs, dtype=np.float64)
    else:
        out = (np.asarray(obs, dtype=np.float64) - stats.mean) / stats.scale()
    if o_max is not None:
        out = np.clip(out, -o_max, o_max)
    return out


def normalize_value_target(stats: RunningMoments, v):
    if stats.count == 0:
        return np.asarray(v, dtype=np.float64)
    return (np.asarray(v, dtype=np.float64) - stats.mean) / stats.scale()


def denormalize_value(stats: RunningMoments, v_out):
    if stats.count == 0:
        return np.asarray(v_out, dtype=np.float64)
    return stats.mean + np.asarray(v_out, dtype=np.float64) * stats.scale()


def normalize_advantages(adv):
    """Zero mean, unit population std per minibatch; size-1 batches map to 0."""
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size < 2:
        return np.zeros_like(adv)
    centered = adv - adv.mean()
    return centered / max(float(np.sqrt(np.mean(centered * centered))), ADV_STD_FLOOR)


def clip_gradient(grad, threshold):
    if threshold is None:
        return grad
    norm = float(np.sqrt(np.dot(grad, grad)))
    if norm > threshold:
        return grad * (threshold / norm)
    return grad
