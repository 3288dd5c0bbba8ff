"""Pure-Python/numpy versions of the estimator recursions.

These must produce bit-identical results to the compiled kernels: the
arithmetic is performed in the same order on float64.
"""
import numpy as np


def discounted_backward(deltas, decay, cut):
    """acc[t] = deltas[t] + decay[t] * acc[t + 1], with acc forced to 0 at cut."""
    n_env, horizon = deltas.shape
    out = np.zeros((n_env, horizon), dtype=np.float64)
    acc = np.zeros(n_env, dtype=np.float64)
    cut = cut.astype(bool)
    for t in range(horizon - 1, -1, -1):
        acc = deltas[:, t] + decay[:, t] * acc
        acc[cut[:, t]] = 0.0
        out[:, t] = acc
    return out


def nstep_targets(rewards, values, next_values, discounts, cut, n):
    """Truncated n-step returns; the window also stops at fragment end and cut steps."""
    n_env, horizon = rewards.shape
    out = np.zeros((n_env, horizon), dtype=np.float64)
    r = rewards.tolist()
    v = values.tolist()
    nv = next_values.tolist()
    d = discounts.tolist()
    c = cut.astype(bool).tolist()
    for e in range(n_env):
        re, de, ce, nve = r[e], d[e], c[e], nv[e]
        for t in range(horizon):
            if ce[t]:
                out[e, t] = v[e][t]
                continue
            g = 0.0
            scale = 1.0
            i = t
            k = 0
            while True:
                g = g + scale * re[i]
                scale = scale * de[i]
                k += 1
                if k >= n or i + 1 >= horizon or ce[i + 1]:
                    g = g + scale * nve[i]
                    break
                i += 1
            out[e, t] = g
    return out
