import itertools
import math

import numpy as np
import pytest

from onpolicy.errors import ConfigError
from onpolicy.optim import OptimCfg, OptimState, adam_step, lr_at, optimizer_step, rmsprop_step


def scalar_adam(theta, grads_fn, steps, lr, b1, b2, eps):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grads_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        theta = theta - lr * mh / (math.sqrt(vh) + eps)
        out.append(theta)
    return out


def scalar_rmsprop(theta, grads_fn, steps, lr, mom, eps, rho, centered):
    ms = mg = buf = 0.0
    out = []
    for _ in range(steps):
        g = grads_fn(theta)
        ms = rho * ms + (1 - rho) * g * g
        denom = ms
        if centered:
            mg = rho * mg + (1 - rho) * g
            denom = max(ms - mg * mg, 0.0)
        upd = lr * g / (math.sqrt(denom) + eps)
        if mom > 0:
            buf = mom * buf + upd
            theta = theta - buf
        else:
            theta = theta - upd
        out.append(theta)
    return out


def run(cfg, theta0, grads_fn, steps):
    st = OptimState.zeros(1)
    p = np.array([theta0])
    out = []
    for _ in range(steps):
        optimizer_step(st, p, np.array([grads_fn(p[0])]), cfg.lr, cfg)
        out.append(p[0])
    return out


def test_lr_schedule():
    c = OptimCfg(lr=0.01, lr_decay=0.0)
    assert lr_at(c, 0.0) == 0.01 and lr_at(c, 1.0) == 0.0
    assert lr_at(c, 0.25) == pytest.approx(0.0075)
    c = OptimCfg(lr=0.01, lr_decay=1.0)
    assert all(lr_at(c, p) == pytest.approx(0.01) for p in np.linspace(0, 1, 11))


def test_zero_grad_no_change():
    for cfg in (OptimCfg(), OptimCfg("RMSProp", centered=True)):
        st = OptimState.zeros(3)
        p = np.array([1.0, 2.0, 3.0])
        optimizer_step(st, p, np.zeros(3), 0.1, cfg)
        np.testing.assert_array_equal(p, [1.0, 2.0, 3.0])


def test_adam_first_step():
    st = OptimState.zeros(1)
    p = np.zeros(1)
    adam_step(st, p, np.ones(1), 0.001, OptimCfg(lr=0.001, momentum=0.9, eps=1e-7))
    assert p[0] == pytest.approx(-0.001 / (1 + 1e-7), abs=1e-18)


def test_adam_matches_scalar_oracle():
    cfg = OptimCfg(lr=0.01, momentum=0.9, eps=1e-7)
    grad = lambda th: 2 * th
    got = run(cfg, 1.5, grad, 1000)
    want = scalar_adam(1.5, grad, 1000, 0.01, 0.9, 0.999, 1e-7)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind,mom,centered",
                         list(itertools.product(["Adam"], [0.0, 0.9], [False]))
                         + list(itertools.product(["RMSProp"], [0.0, 0.9], [False, True])))
def test_scalar_oracle_all_variants(kind, mom, centered):
    cfg = OptimCfg(kind, lr=0.003, momentum=mom, eps=1e-5, centered=centered)
    grad = lambda th: 2 * th
    got = run(cfg, 1.0, grad, 1000)
    if kind == "Adam":
        want = scalar_adam(1.0, grad, 1000, 0.003, mom, 0.999, 1e-5)
    else:
        want = scalar_rmsprop(1.0, grad, 1000, 0.003, mom, 1e-5, 0.9, centered)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_centered_steps_grow_for_constant_gradient():
    cfg = OptimCfg("RMSProp", lr=1e-3, momentum=0.0, eps=1e-7, centered=True)
    got = run(cfg, 0.0, lambda th: 1.0, 100)
    want = scalar_rmsprop(0.0, lambda th: 1.0, 100, 1e-3, 0.0, 1e-7, 0.9, True)
    np.testing.assert_allclose(got, want, atol=1e-12)
    steps = -np.diff([0.0] + got)
    assert steps[-1] > 10 * steps[0]


def test_rmsprop_momentum_scales_displacement():
    grad = lambda th: 1.0
    a = run(OptimCfg("RMSProp", lr=1e-3, momentum=0.9), 0.0, grad, 300)
    b = run(OptimCfg("RMSProp", lr=1e-3, momentum=0.0), 0.0, grad, 300)
    ratio = (a[-1] - a[-2]) / (b[-1] - b[-2])
    assert ratio == pytest.approx(10.0, rel=1e-3)


def test_determinism(rng):
    grads = rng.normal(size=(50, 4))
    outs = []
    for _ in range(2):
        st, p = OptimState.zeros(4), np.ones(4)
        for g in grads:
            rmsprop_step(st, p, g, 1e-2, OptimCfg("RMSProp", momentum=0.5, centered=True))
        outs.append(p.copy())
    np.testing.assert_array_equal(*outs)


def test_config_errors():
    with pytest.raises(ConfigError):
        OptimCfg("SGD")
    with pytest.raises(ConfigError):
        OptimCfg(eps=0.0)
    with pytest.raises(ConfigError):
        OptimCfg(momentum=1.0)
