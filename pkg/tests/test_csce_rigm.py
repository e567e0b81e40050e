import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from juicesd import csce_rigm as cr
from juicesd.constellation import build_constellation
from juicesd.kernels import GaussMsg

from conftest import cn
from oracles import absorb_all_components, slot_likelihood

QPSK = build_constellation("qpsk")
QAM16 = build_constellation("16qam")


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 31), name=st.sampled_from(["qpsk", "16qam"]))
def test_absorption_rotation_relations(seed, name):
    c = build_constellation(name)
    rng = np.random.default_rng(seed)
    base = complex(cn(rng, 1)[0] * 2)
    var = float(rng.uniform(0.01, 2))
    r = complex(cn(rng, 1)[0] * 2)
    v = float(rng.uniform(0.01, 2))
    means, vars_ = absorb_all_components(base, var, r, v, c)
    rot = np.exp(1j * c.theta0 * np.arange(c.omega_order))
    np.testing.assert_allclose(means, means[0] * rot, atol=1e-10)
    np.testing.assert_allclose(vars_, vars_[0], atol=1e-10)
    out = cr.rigm_absorb(cr.RigmMsg(base, var, c.omega_order, c.theta0), r, v, c)
    assert abs(out.base_mean - means[0]) < 1e-10
    assert abs(out.common_var - vars_[0]) < 1e-10


@pytest.mark.parametrize("c", [QPSK, QAM16])
def test_init_moment_matches_each_subset(rng, c):
    r, v = complex(cn(rng, 1)[0]), 0.3
    msg = cr.rigm_init(r, v, c)
    for i, sub in enumerate(c.subsets):
        s = c.points[sub]
        mu = r / s
        m = mu.mean()
        var = np.mean(v / np.abs(s) ** 2 + np.abs(mu) ** 2) - abs(m) ** 2
        # symbols rotated by +i*theta0 give means rotated by -i*theta0
        assert abs(m - msg.component_means()[-i % c.omega_order]) < 1e-12
        assert abs(var - msg.common_var) < 1e-12


def test_rigm_density_is_invariant(rng):
    m = cr.RigmMsg(cn(rng, 5), rng.uniform(0.1, 1, 5), 4, np.pi / 2)
    g = cn(rng, 5)
    np.testing.assert_allclose(m.density(g), m.density(1j * g))


def test_flat_slots_pass_through(rng):
    m = cr.RigmMsg(cn(rng, 4), rng.uniform(0.1, 1, 4), 4, np.pi / 2)
    out = cr.rigm_absorb(m, cn(rng, 4), np.array([np.inf, 0.5, np.inf, 0.2]), QPSK)
    assert out.base_mean[0] == m.base_mean[0] and out.common_var[2] == m.common_var[2]
    assert out.common_var[1] != m.common_var[1]


def test_leave_one_out_matches_sequential_combine(rng):
    T = 5
    r, v = cn(rng, (3, T)), rng.uniform(0.1, 0.5, (3, T))
    loo = cr.rigm_leave_one_out(r, v, QPSK)
    for t in range(T):
        keep = [i for i in range(T) if i != t]
        ref = cr.rigm_combine(r[:, keep], v[:, keep], QPSK)
        np.testing.assert_allclose(loo.base_mean[:, t], ref.base_mean, atol=1e-14)
        np.testing.assert_allclose(loo.common_var[:, t], ref.common_var, atol=1e-14)
    np.testing.assert_array_equal(cr.leave_one_out_order(3), [[1, 2], [0, 2], [0, 1]])
    with pytest.raises(ValueError):
        cr.rigm_leave_one_out(r[:, :1], v[:, :1], QPSK)


def test_g_posterior_against_quadrature(rng):
    lam, beta = 0.2, 0.8
    msg = cr.RigmMsg(np.array(0.6 - 0.3j), np.array(0.25), 4, np.pi / 2)
    ls, lsl, mean, var = cr.rigm_g_posterior(msg, lam, beta)
    x = np.arange(-5, 5, 0.01)
    G = x[None, :] + 1j * x[:, None]
    slab = (msg.density(G) * lam * np.exp(-np.abs(G) ** 2 / beta) / (np.pi * beta)).sum() * 1e-4
    spike = (1 - lam) * msg.density(0.0)
    assert np.exp(ls) == pytest.approx(spike / (spike + slab), rel=1e-6)
    assert np.exp(ls) + np.exp(lsl) == pytest.approx(1.0)
    assert mean == pytest.approx((0.6 - 0.3j) * beta / (beta + 0.25))
    assert var == pytest.approx(beta * 0.25 / (beta + 0.25))


def test_g_posterior_flat_message_returns_prior():
    ls, lsl, mean, var = cr.rigm_g_posterior(cr.RigmMsg(0j, np.inf, 4, np.pi / 2), 0.1, 2.0)
    assert np.exp(lsl) == pytest.approx(0.1) and mean == 0 and var == 2.0


def test_emit_y(rng):
    msg = cr.RigmMsg(cn(rng, 6), rng.uniform(0.1, 1, 6), 4, np.pi / 2)
    y = cr.rigm_emit_y(msg, 0.1, np.ones(6), QAM16)
    np.testing.assert_allclose(y.total_mass(), 1)
    assert y.n_components == 16
    pin = cr.rigm_emit_y(msg, 0.1, np.ones(6), QPSK, symbols=QPSK.reference_symbol)
    assert pin.n_components == 1


def test_ga_without_pilots_has_zero_means(rng):
    r, v = cn(rng, (20, 7)), rng.uniform(0.1, 1, (20, 7))
    msgs = cr.ga_slot_messages(r, v, QPSK, n_rs=0)
    assert np.abs(msgs.mean).max() < 1e-12
    loo = cr.gauss_leave_one_out(msgs)
    assert np.abs(loo.mean).max() < 1e-12
    pinned = cr.ga_slot_messages(r, v, QPSK, n_rs=1)
    np.testing.assert_allclose(pinned.mean[:, 0], r[:, 0] / QPSK.reference_symbol)


def test_gauss_leave_one_out_is_a_product(rng):
    m = GaussMsg(cn(rng, (4, 5)), rng.uniform(0.1, 1, (4, 5)))
    loo = cr.gauss_leave_one_out(m)
    for t in range(5):
        keep = [i for i in range(5) if i != t]
        ref = cr.gauss_combine(GaussMsg(m.mean[:, keep], m.var[:, keep]))
        np.testing.assert_allclose(loo.mean[:, t], ref.mean)
        np.testing.assert_allclose(loo.var[:, t], ref.var)


def test_rigm_equals_exact_product_for_a_single_slot(rng):
    # one QPSK slot: the RIGM is a moment-matched fit of the exact message
    r, v = complex(cn(rng, 1)[0]), 0.2
    msg = cr.rigm_init(r, v, QPSK)
    g = cn(rng, 10) * 0.1 + r
    assert np.all(np.isfinite(msg.density(g)))
    # for QPSK each subset holds one point, so the fit is exact
    np.testing.assert_allclose(msg.density(g), slot_likelihood(g, r, v, QPSK.points), rtol=1e-12)
