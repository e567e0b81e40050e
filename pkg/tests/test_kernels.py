import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from juicesd import kernels as kn
from juicesd.kernels import GaussMsg, NumericalDegeneracyError, SpikeGM

from conftest import cn


def _random_prior(rng, batch, J, sort=False):
    lw = rng.normal(size=batch + (J,)) * 3
    p = SpikeGM(rng.normal(size=batch), lw, cn(rng, batch + (J,)), rng.uniform(0.01, 2, batch + (J,)))
    p = p.normalized()
    if sort:
        from juicesd.csce_exact import prune_spike_gm
        p = prune_spike_gm(p, rel=0.0)
    return p


def _grid_moments(prior, r, v, extent=8.0, n=801):
    # posterior of Y under a scalar spike+mixture prior, by brute-force quadrature
    x = np.linspace(-extent, extent, n)
    h = x[1] - x[0]
    Y = x[None, :] + 1j * x[:, None]
    lik = np.exp(-np.abs(r - Y) ** 2 / v) / (np.pi * v)
    dens = sum(w * np.exp(-np.abs(Y - m) ** 2 / s) / (np.pi * s)
               for w, m, s in zip(prior.weights, prior.means, prior.vars))
    f = lik * dens
    ws = float(prior.spike_weight) * np.exp(-abs(r) ** 2 / v) / (np.pi * v)
    z = f.sum() * h * h + ws
    m1 = (f * Y).sum() * h * h / z
    m2 = (f * np.abs(Y) ** 2).sum() * h * h / z
    return m1, m2 - abs(m1) ** 2


def test_awgn_posterior_formula():
    post = kn.awgn_posterior(GaussMsg(1 + 1j, 2.0), 3.0, 1.0)
    assert post.mean == pytest.approx((2 * 3 + (1 + 1j)) / 3)
    assert post.var == pytest.approx(2 / 3)
    flat = kn.awgn_posterior(GaussMsg(0, np.inf), 2 - 1j, 0.5)
    assert flat.mean == 2 - 1j and flat.var == 0.5


@pytest.mark.parametrize("seed", range(5))
def test_spike_gm_posterior_matches_quadrature(seed):
    rng = np.random.default_rng(seed)
    J = 3
    prior = SpikeGM.from_weights(0.4, np.full(J, 0.2), cn(rng, J), rng.uniform(0.2, 1.0, J))
    r = complex(cn(rng, 1)[0])
    v = float(rng.uniform(0.3, 1.0))
    m_ref, v_ref = _grid_moments(prior, r, v)
    out = kn.spike_gm_posterior(prior, np.array(r), np.array(v))
    assert abs(out.mean - m_ref) < 1e-6
    assert abs(out.var - v_ref) < 1e-6


def test_spike_probability_matches_bayes_rule():
    prior = SpikeGM.from_weights(0.7, np.array([0.3]), np.array([0j]), np.array([1.0]))
    r, v = 0.5 + 0.2j, 0.4
    a = 0.7 * np.exp(-abs(r) ** 2 / v) / v
    b = 0.3 * np.exp(-abs(r) ** 2 / (1 + v)) / (1 + v)
    assert kn.spike_probability(prior, r, v) == pytest.approx(a / (a + b), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), J=st.integers(1, 20), sort=st.booleans())
def test_compiled_matches_reference(seed, J, sort):
    if kn._fast is None:
        pytest.skip("numba unavailable")
    rng = np.random.default_rng(seed)
    p = _random_prior(rng, (7, 3), J, sort)
    r = cn(rng, (7, 3), 2.0)
    v = rng.uniform(0.01, 3, (7, 3))
    a = kn.spike_gm_posterior(p, r, v)
    b = kn.spike_gm_posterior_reference(p, r, v)
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(a.var, b.var, rtol=1e-9, atol=1e-12)


def test_extreme_weights_are_stable():
    # weights spanning 600 decades must not underflow
    p = SpikeGM(np.array(-700.0), np.array([0.0, -1400.0]), np.array([1 + 0j, -1]), np.array([0.1, 0.1]))
    out = kn.spike_gm_posterior(p, np.array(1.0 + 0j), np.array(0.5))
    assert np.isfinite(out.mean) and abs(out.mean - 1) < 0.2


@pytest.mark.parametrize("impl", ["compiled", "reference"])
def test_total_underflow_raises(impl):
    p = SpikeGM(np.array(-np.inf), np.array([-np.inf]), np.array([0j]), np.array([1.0]))
    f = kn.spike_gm_posterior if impl == "compiled" else kn.spike_gm_posterior_reference
    with pytest.raises(NumericalDegeneracyError):
        f(p, np.array(0j), np.array(1.0))


def test_moment_match_two_components():
    out = kn.gm_moment_match(np.array([1.0, 3.0]), np.array([1 + 0j, -1]), np.array([0.5, 0.5]))
    assert out.mean == pytest.approx(-0.5)
    # E|x|^2 = 0.5 + 1, minus |mean|^2
    assert out.var == pytest.approx(1.5 - 0.25)


@pytest.mark.parametrize("w", [np.array([]), np.array([-1.0, 2.0]), np.array([0.0, 0.0])])
def test_moment_match_rejects_bad_weights(w):
    with pytest.raises(ValueError):
        kn.gm_moment_match(w, np.zeros(w.size, complex), np.ones(w.size))


def test_moment_match_log_equals_linear(rng):
    lw = rng.normal(size=(4, 6)) * 50
    mu, s = cn(rng, (4, 6)), rng.uniform(0.1, 1, (4, 6))
    a = kn.moment_match_log(lw, mu, s)
    w = np.exp(lw - lw.max(axis=-1, keepdims=True))
    b = kn.gm_moment_match(w, mu, s)
    np.testing.assert_allclose(a.mean, b.mean)
    np.testing.assert_allclose(a.var, b.var)


def test_spikegm_indexing_and_moments(rng):
    p = _random_prior(rng, (5, 2), 3)
    sub = p[1:3]
    assert sub.batch_shape == (2, 2)
    np.testing.assert_allclose(sub.mean(), p.mean()[1:3])
    np.testing.assert_allclose(p.total_mass(), 1)
    assert np.all(p.variance() >= 0)
