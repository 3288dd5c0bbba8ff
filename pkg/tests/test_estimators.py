import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onpolicy.estimators import (Fragment, ValueLossCfg, apply_abandoned_handling, estimate,
                                 gae, nstep, value_loss, vtrace_estimate)
from onpolicy.errors import UsageError
from conftest import rel_err


def naive_gae(r, v, boot, term, gamma, lam):
    """Direct sum over TD residuals, restarting at terminations."""
    T = len(r)
    nv = np.append(v[1:], boot)
    delta = [r[t] + gamma * nv[t] * (not term[t]) - v[t] for t in range(T)]
    adv = np.zeros(T)
    for t in range(T):
        coef = 1.0
        for i in range(t, T):
            adv[t] += coef * delta[i]
            if term[i]:
                break
            coef *= gamma * lam
    return adv


def naive_vtrace(r, v, boot, log_rho, gamma, lam, c_bar, rho_bar):
    """Sum form: v_s = V_s + sum_t gamma^(t-s) (prod_{i<t} lam c_i) rho_t delta_t."""
    T = len(r)
    ratio = np.exp(log_rho)
    rho, c = np.minimum(ratio, rho_bar), np.minimum(ratio, c_bar)
    nv = np.append(v[1:], boot)
    delta = rho * (r + gamma * nv - v)
    vs = np.zeros(T)
    for s in range(T):
        acc, coef = 0.0, 1.0
        for t in range(s, T):
            acc += coef * delta[t]
            coef *= gamma * lam * c[t]
        vs[s] = v[s] + acc
    vs_next = np.append(vs[1:], boot)
    adv = rho * (r + gamma * (lam * vs_next + (1 - lam) * nv) - v)
    return adv, vs


def _random_frag(rng, T=12, term_p=0.15):
    return Fragment(rng.normal(size=T), rng.normal(size=T), float(rng.normal()),
                    terminated=rng.random(T) < term_p)


def test_zero_fragment():
    f = Fragment(np.zeros(5), np.zeros(5), 0.0)
    for out in (nstep(f, 0.99, 3), gae(f, 0.99, 0.95), vtrace_estimate(f, 0.99, 0.95)):
        assert np.all(out.advantages == 0) and np.all(out.value_targets == 0)


def test_nstep_hand_example():
    f = Fragment([1.0, 1.0], [0.5, 0.5], 0.5)
    out = nstep(f, 0.99, 10**6)
    assert out.value_targets[0] == pytest.approx(1 + 0.99 + 0.99**2 * 0.5, abs=1e-12)
    assert out.value_targets[0] == pytest.approx(2.480050, abs=1e-6)
    assert out.advantages[0] == pytest.approx(1.980050, abs=1e-6)


def test_nstep_one_is_td(rng):
    f = _random_frag(rng)
    np.testing.assert_allclose(nstep(f, 0.9, 1).advantages, gae(f, 0.9, 0.0).advantages, atol=1e-12)


def test_gae_hand_example():
    out = gae(Fragment([1.0, 1.0], [0.5, 0.5], 0.5), 0.99, 0.95)
    assert out.advantages[1] == pytest.approx(0.995)
    assert out.advantages[0] == pytest.approx(0.995 + 0.9405 * 0.995, abs=1e-12)
    assert out.advantages[0] == pytest.approx(1.930798, abs=1e-6)


def test_gae_lambda_zero_is_td_residual(rng):
    f = _random_frag(rng)
    nv = np.append(f.values[1:], f.bootstrap_value)
    delta = f.rewards + 0.97 * nv * (~f.terminated) - f.values
    np.testing.assert_allclose(gae(f, 0.97, 0.0).advantages, delta, atol=1e-10)


def test_gae_lambda_one_is_full_nstep(rng):
    f = _random_frag(rng, T=15)
    a = gae(f, 0.97, 1.0).advantages
    for t in range(15):
        b = nstep(f, 0.97, 15 - t).advantages[t]
        assert abs(a[t] - b) < 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_gae_matches_direct_sum(seed):
    rng = np.random.default_rng(seed)
    f = _random_frag(rng, T=20)
    want = naive_gae(f.rewards, f.values, f.bootstrap_value, f.terminated, 0.95, 0.9)
    np.testing.assert_allclose(gae(f, 0.95, 0.9).advantages, want, atol=1e-10)


def test_vtrace_on_policy_equals_gae(rng):
    for c in (1.0, 1.5, 3.0):
        f = _random_frag(rng)
        a, b = vtrace_estimate(f, 0.99, 0.9, c, c), gae(f, 0.99, 0.9)
        np.testing.assert_allclose(a.advantages, b.advantages, atol=1e-10)
        np.testing.assert_allclose(a.value_targets, b.value_targets, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_vtrace_off_policy_matches_sum_form(seed):
    rng = np.random.default_rng(seed)
    T = 10
    r, v, boot = rng.normal(size=T), rng.normal(size=T), float(rng.normal())
    blp = rng.normal(size=T)
    tlp = blp + rng.normal(0, 0.5, T)
    f = Fragment(r, v, boot, behavior_log_probs=blp, target_log_probs=tlp)
    out = vtrace_estimate(f, 0.98, 0.9, 1.2, 1.5)
    adv, vs = naive_vtrace(r, v, boot, tlp - blp, 0.98, 0.9, 1.2, 1.5)
    np.testing.assert_allclose(out.value_targets, vs, atol=1e-10)
    np.testing.assert_allclose(out.advantages, adv, atol=1e-10)


def test_vtrace_truncation_single_step():
    f = Fragment([1.0], [0.0], 0.0, behavior_log_probs=[0.0], target_log_probs=[2.0])
    out = vtrace_estimate(f, 0.99, 1.0, 1.0, 1.5)
    assert out.advantages[0] == pytest.approx(1.5)  # rho_0 * 1 with rho_0 = 1.5


def test_vtrace_zero_rewards_any_ratio(rng):
    f = Fragment(np.zeros(6), np.zeros(6), 0.0, behavior_log_probs=rng.normal(size=6),
                 target_log_probs=rng.normal(size=6))
    assert np.all(vtrace_estimate(f, 0.9, 0.9, 2.0, 2.0).advantages == 0)


def test_abandoned_no_op_and_last_index():
    f = Fragment([1.0, 2.0], [0.3, 0.4], 0.7)
    base = gae(f, 0.99, 0.95)
    assert apply_abandoned_handling(f, base, True, lambda fr, **k: gae(fr, 0.99, 0.95, **k)) is base
    f = Fragment([1.0, 2.0], [0.3, 0.4], 0.7, abandoned=[False, True])
    out = gae(f, 0.99, 0.95, handle_abandon=True)
    assert out.advantages[1] == 0.0 and out.value_targets[1] == 0.4


def test_abandoned_two_step_recursion_oracle():
    g, lam = 0.99, 0.95
    r, v, boot = np.array([1.0, 2.0]), np.array([0.3, 0.4]), 0.7
    f = Fragment(r, v, boot, abandoned=[False, True])
    off = gae(f, g, lam)
    on = apply_abandoned_handling(f, off, True, lambda fr, **k: gae(fr, g, lam, **k))
    # disabled: abandonment acts as termination
    a1_off = r[1] - v[1]
    a0_off = r[0] + g * v[1] - v[0] + g * lam * a1_off
    assert off.advantages[1] == pytest.approx(a1_off) and off.advantages[0] == pytest.approx(a0_off)
    # enabled: step 1 is cut (A=0), step 0 bootstraps from V(s_1)
    a0_on = r[0] + g * v[1] - v[0]
    assert on.advantages[0] == pytest.approx(a0_on, abs=1e-12)
    assert off.advantages[0] - on.advantages[0] == pytest.approx(g * lam * a1_off, abs=1e-12)


def test_abandoned_nstep_and_vtrace():
    f = Fragment([1.0, 1.0, 1.0], [0.5, 0.5, 0.5], 9.0, abandoned=[False, True, False])
    out = nstep(f, 0.9, 100, handle_abandon=True)
    assert out.value_targets[0] == pytest.approx(1 + 0.9 * 0.5)
    assert out.value_targets[1] == 0.5 and out.advantages[1] == 0.0
    assert out.value_targets[2] == pytest.approx(1 + 0.9 * 9.0)
    vt = vtrace_estimate(f, 0.9, 1.0, handle_abandon=True)
    np.testing.assert_allclose(vt.value_targets, out.value_targets, atol=1e-12)


def test_termination_isolation(rng):
    f = _random_frag(rng, T=10, term_p=0.0)
    f.terminated[4] = True
    a = gae(f, 0.99, 0.95).advantages
    f2 = Fragment(f.rewards.copy(), f.values, f.bootstrap_value, terminated=f.terminated)
    f2.rewards[5:] += 100.0
    b = gae(f2, 0.99, 0.95).advantages
    np.testing.assert_array_equal(a[:5], b[:5])


def test_batched_equals_per_fragment(rng):
    E, T = 4, 9
    r, v = rng.normal(size=(E, T)), rng.normal(size=(E, T))
    boot, term = rng.normal(size=E), rng.random((E, T)) < 0.2
    batch = gae(Fragment(r, v, boot, terminated=term), 0.99, 0.9)
    for e in range(E):
        one = gae(Fragment(r[e], v[e], boot[e], terminated=term[e]), 0.99, 0.9)
        np.testing.assert_array_equal(batch.advantages[e], one.advantages)


def test_errors():
    with pytest.raises(UsageError):
        Fragment([], [], 0.0)
    f = Fragment([1.0], [0.0], 0.0)
    with pytest.raises(UsageError):
        nstep(f, 0.99, 0)
    with pytest.raises(UsageError):
        gae(f, 1.5, 0.9)
    with pytest.raises(UsageError):
        estimate("TD", f, 0.9)
    with pytest.raises(UsageError):
        Fragment([1.0], [0.0], 0.0, terminated=[True], abandoned=[True])


def test_value_loss_examples():
    h = ValueLossCfg("Huber", 1.0)
    assert value_loss(0.5, None, 0.0, h)[0] == pytest.approx(0.125)
    assert value_loss(2.0, None, 0.0, h)[0] == pytest.approx(1.5)
    c = ValueLossCfg("MSE", ppo_clip=0.1)
    loss, grad = value_loss(0.5, 0.0, 0.5, c)
    assert loss == pytest.approx(0.16)
    assert grad == 0.0


def test_huber_is_half_mse_inside(rng):
    x = rng.uniform(-1, 1, 50)
    np.testing.assert_allclose(value_loss(x, None, 0.0, ValueLossCfg("Huber", 1.0))[0],
                               value_loss(x, None, 0.0, ValueLossCfg("MSE"))[0] / 2)


@pytest.mark.parametrize("cfg", [ValueLossCfg(), ValueLossCfg("Huber", 0.7),
                                 ValueLossCfg("MSE", ppo_clip=0.2),
                                 ValueLossCfg("Huber", 0.7, ppo_clip=0.2)])
def test_value_loss_gradient(cfg, rng):
    pred, old, tgt = rng.normal(size=40), rng.normal(size=40), rng.normal(size=40)
    _, g = value_loss(pred, old, tgt, cfg)
    h = 1e-6
    num = (value_loss(pred + h, old, tgt, cfg)[0] - value_loss(pred - h, old, tgt, cfg)[0]) / (2 * h)
    assert rel_err(g, num) < 1e-6


finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=15), finite,
       st.floats(0.5, 1.0), st.floats(0.0, 1.0))
def test_property_gae_direct_sum(rv, boot, gamma, lam):
    r, v = np.array([a for a, _ in rv]), np.array([b for _, b in rv])
    out = gae(Fragment(r, v, boot), gamma, lam)
    want = naive_gae(r, v, boot, np.zeros(len(r), bool), gamma, lam)
    np.testing.assert_allclose(out.advantages, want, atol=1e-9)
    np.testing.assert_allclose(out.value_targets, out.advantages + v, atol=1e-12)
