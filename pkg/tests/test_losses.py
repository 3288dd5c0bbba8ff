import numpy as np
import pytest
from scipy.special import softmax

from onpolicy import losses as L
from onpolicy.errors import UsageError
from conftest import fd_grad


def fd(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_pg():
    loss, g = L.pg_loss(np.array([-1.0]), np.array([2.0]))
    assert loss[0] == 2.0 and g[0] == -2.0
    loss, g = L.pg_loss(np.array([-1.0]), np.array([0.0]))
    assert loss[0] == 0.0 and g[0] == 0.0


def test_vtrace_loss():
    lp = np.array([-0.3])
    assert L.vtrace_loss(lp, lp, np.array([1.5]), 1.0)[0][0] == L.pg_loss(lp, np.array([1.5]))[0][0]
    loss, g = L.vtrace_loss(np.array([1.0]), np.array([0.0]), np.array([1.0]), 1.2)
    assert loss[0] == pytest.approx(-1.2) and g[0] == pytest.approx(-1.2)


def test_vtrace_loss_gradient_frozen_rho(rng):
    blp, adv = rng.normal(size=20), rng.normal(size=20)
    tlp = blp + rng.normal(0, 0.3, 20)
    _, g = L.vtrace_loss(tlp, blp, adv, 1.1)
    rho = np.minimum(np.exp(tlp - blp), 1.1)
    num = fd(lambda x: -rho * x * adv, tlp)
    np.testing.assert_allclose(g, num, rtol=1e-6)


def test_ppo_branches():
    loss, g = L.ppo_loss(np.array([0.0]), np.array([0.0]), np.array([1.7]), 0.2)
    assert loss[0] == pytest.approx(-1.7) and g[0] == pytest.approx(-1.7)
    lr = np.array([np.log(2.0)])
    loss, g = L.ppo_loss(lr, np.zeros(1), np.array([1.0]), 0.2)
    assert loss[0] == pytest.approx(-1.2) and g[0] == 0.0
    loss, g = L.ppo_loss(lr, np.zeros(1), np.array([-1.0]), 0.2)
    assert loss[0] == pytest.approx(2.0) and g[0] == pytest.approx(2.0)
    # lower band edge is 1/(1+eps)
    loss, _ = L.ppo_loss(np.array([np.log(0.5)]), np.zeros(1), np.array([-1.0]), 0.2)
    assert loss[0] == pytest.approx(1 / 1.2)


def test_ppo_shift_invariance(rng):
    tlp, blp, adv = rng.normal(size=30), rng.normal(size=30), rng.normal(size=30)
    a = L.ppo_loss(tlp, blp, adv, 0.3)[0]
    b = L.ppo_loss(tlp + 5.0, blp + 5.0, adv, 0.3)[0]
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_on_policy_gradients_coincide(rng):
    lp, adv = rng.normal(size=25), rng.normal(size=25)
    g_pg = L.pg_loss(lp, adv)[1]
    for rho in (1.0, 2.0):
        np.testing.assert_allclose(L.vtrace_loss(lp, lp, adv, rho)[1], g_pg, atol=1e-12)
    np.testing.assert_allclose(L.ppo_loss(lp, lp, adv, 0.2)[1], g_pg, atol=1e-12)


def test_awr():
    assert L.awr_weights(np.array([0.5]), 1.0, 1.5)[0] == 1.5
    w = L.awr_weights(np.array([-1.0]), 1e-6, 1.3)[0]
    assert w < 1e-300
    assert L.awr_weights(np.array([0.1]), 1e-6, 1.3)[0] == pytest.approx(1.3)
    # no overflow for huge advantages
    assert np.isfinite(L.awr_weights(np.array([1e6]), 1e-6, 1.3)).all()


def test_awr_limit_is_scaled_rpa(rng):
    adv = rng.normal(size=200)
    adv = adv[np.abs(adv) >= 1e-3]
    lp = rng.normal(size=adv.size)
    awr = L.awr_loss(lp, adv, 1e-6, 1.3)[0]
    np.testing.assert_allclose(awr, 1.3 * L.rpa_loss(lp, adv)[0], atol=1e-9)


def test_rpa():
    lp = np.array([-0.7, -0.7, -0.7])
    loss, g = L.rpa_loss(lp, np.array([2.0, -2.0, 0.0]))
    np.testing.assert_array_equal(loss, [0.7, 0.0, 0.0])
    np.testing.assert_array_equal(g, [-1.0, 0.0, 0.0])


@pytest.mark.parametrize("kind", ["pg", "vtrace", "ppo", "awr", "rpa"])
def test_per_sample_gradients(kind, rng):
    blp, adv = rng.normal(size=40), rng.normal(size=40)
    tlp = blp + rng.normal(0, 0.4, 40)
    fns = {"pg": lambda x: L.pg_loss(x, adv), "ppo": lambda x: L.ppo_loss(x, blp, adv, 0.2),
           "awr": lambda x: L.awr_loss(x, adv, 0.5, 2.0), "rpa": lambda x: L.rpa_loss(x, adv)}
    if kind == "vtrace":
        return  # frozen-rho gradient is checked separately
    g = fns[kind](tlp)[1]
    num = fd(lambda x: fns[kind](x)[0], tlp)
    np.testing.assert_allclose(g, num, rtol=1e-4, atol=1e-8)


def test_vmpo_examples():
    adv = np.array([3.0, 1.0, -1.0, -2.0])
    out = L.vmpo_loss(np.zeros(4), adv, 0.0, 0.1)
    np.testing.assert_array_equal(out.selected, [0, 1])
    np.testing.assert_allclose(out.weights[:2], softmax([3.0, 1.0]), atol=1e-12)
    assert out.weights[0] == pytest.approx(0.8808, abs=1e-4)
    out = L.vmpo_loss(np.zeros(6), np.full(6, 0.4), 0.3, 0.1)
    np.testing.assert_allclose(out.weights[out.selected], 1 / 3)
    with pytest.raises(UsageError):
        L.vmpo_loss(np.zeros(1), np.ones(1), 0.0, 0.1)


def test_vmpo_odd_batch_and_permutation(rng):
    adv = rng.normal(size=7)
    out = L.vmpo_loss(np.zeros(7), adv, 0.0, 0.1)
    assert len(out.selected) == 4
    assert out.weights.sum() == pytest.approx(1.0)
    perm = rng.permutation(7)
    out2 = L.vmpo_loss(np.zeros(7), adv[perm], 0.0, 0.1)
    np.testing.assert_allclose(np.sort(out2.weights), np.sort(out.weights), atol=1e-15)


def test_vmpo_gradients(rng):
    adv, lp = rng.normal(size=10), rng.normal(size=10)
    out = L.vmpo_loss(lp, adv, 0.2, 0.1)
    num = fd_grad(lambda x: L.vmpo_loss(x, adv, 0.2, 0.1).loss, lp)
    np.testing.assert_allclose(out.dloss_dlp, num, rtol=1e-6, atol=1e-10)
    num = fd(lambda p: L.vmpo_loss(lp, adv, p, 0.1).temperature_loss, 0.2)
    assert out.dtemp_dlog_eta == pytest.approx(num, rel=1e-6)


def test_vmpo_small_eps_flattens_weights():
    adv = np.array([2.0, 1.5, 1.0, 0.5, -1.0, -2.0, -3.0, -4.0])
    log_eta = 0.0
    first = L.vmpo_loss(np.zeros(8), adv, log_eta, 1e-4)
    for _ in range(20000):
        out = L.vmpo_loss(np.zeros(8), adv, log_eta, 1e-4)
        log_eta = min(log_eta - 0.05 * out.dtemp_dlog_eta, np.log(1e6))
    w = out.weights[out.selected]
    assert np.ptp(w) < 0.1 * np.ptp(first.weights[first.selected])
    np.testing.assert_allclose(w, 0.25, atol=0.01)


def test_policy_loss_dispatch(rng):
    lp, adv = rng.normal(size=8), rng.normal(size=8)
    loss, g, t, dt = L.policy_loss(L.PolicyLossCfg("PG"), lp, lp, adv)
    assert loss == pytest.approx(np.mean(-lp * adv)) and t == 0.0 and dt == 0.0
    np.testing.assert_allclose(g, -adv / 8)
    with pytest.raises(UsageError):
        L.PolicyLossCfg("TRPO")
