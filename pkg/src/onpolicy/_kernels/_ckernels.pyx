# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled backward recursions used by the advantage estimators."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def discounted_backward(const double[:, ::1] deltas,
                        const double[:, ::1] decay,
                        const unsigned char[:, ::1] cut):
    """acc[t] = deltas[t] + decay[t] * acc[t + 1], with acc forced to 0 at cut."""
    cdef Py_ssize_t n_env = deltas.shape[0]
    cdef Py_ssize_t horizon = deltas.shape[1]
    out = np.zeros((n_env, horizon), dtype=np.float64)
    cdef double[:, ::1] acc_out = out
    cdef Py_ssize_t e, t
    cdef double acc
    for e in range(n_env):
        acc = 0.0
        for t in range(horizon - 1, -1, -1):
            if cut[e, t]:
                acc = 0.0
            else:
                acc = deltas[e, t] + decay[e, t] * acc
            acc_out[e, t] = acc
    return out


def nstep_targets(const double[:, ::1] rewards,
                  const double[:, ::1] values,
                  const double[:, ::1] next_values,
                  const double[:, ::1] discounts,
                  const unsigned char[:, ::1] cut,
                  long n):
    """Truncated n-step returns; the window also stops at fragment end and cut steps."""
    cdef Py_ssize_t n_env = rewards.shape[0]
    cdef Py_ssize_t horizon = rewards.shape[1]
    out = np.zeros((n_env, horizon), dtype=np.float64)
    cdef double[:, ::1] tgt = out
    cdef Py_ssize_t e, t, i
    cdef long k
    cdef double g, scale
    for e in range(n_env):
        for t in range(horizon):
            if cut[e, t]:
                tgt[e, t] = values[e, t]
                continue
            g = 0.0
            scale = 1.0
            i = t
            k = 0
            while True:
                g = g + scale * rewards[e, i]
                scale = scale * discounts[e, i]
                k += 1
                if k >= n or i + 1 >= horizon or cut[e, i + 1]:
                    g = g + scale * next_values[e, i]
                    break
                i += 1
            tgt[e, t] = g
    return out
