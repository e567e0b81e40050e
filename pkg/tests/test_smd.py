import numpy as np
import pytest

from juicesd.kernels import SpikeGM
from juicesd.smd import SmdDivergence, gamp_slot

from conftest import cn


def gaussian_prior(K, T=None, var=1.0):
    b = (K,) if T is None else (K, T)
    return SpikeGM(np.full(b, -np.inf), np.zeros(b + (1,)), np.zeros(b + (1,), complex), np.full(b + (1,), var))


def lmmse(A, R, N0, var=1.0):
    K = A.shape[1]
    return np.linalg.solve(A.T @ A + N0 / var * np.eye(K), A.T @ R)


@pytest.mark.parametrize("L,K", [(40, 20), (30, 30), (60, 45)])
def test_gaussian_prior_converges_to_lmmse(rng, L, K):
    A = rng.standard_normal((L, K)) / np.sqrt(L)
    N0 = 0.1
    Y = cn(rng, (K, 3))
    R = A @ Y + cn(rng, (L, 3), N0)
    res = gamp_slot(A, R, gaussian_prior(K, 3), N0, max_iter=500, damping=1.0, tol=1e-14)
    ref = lmmse(A, R, N0)
    assert np.linalg.norm(res.posterior.mean - ref) / np.linalg.norm(ref) < 1e-6


def test_single_user_noiseless_spike_prior(rng):
    # K=1: the extrinsic is the matched-filter output
    A = rng.standard_normal((16, 1)) / 4
    y = 0.7 - 0.3j
    R = A[:, 0] * y
    prior = SpikeGM.from_weights(0.5, np.array([0.5]), np.array([0j]), np.array([1.0]))
    res = gamp_slot(A, R, prior, 1e-8, max_iter=50, damping=1.0)
    assert abs(res.posterior.mean[0] - y) < 1e-6


def test_slots_are_independent(rng):
    L, K = 20, 30
    A = rng.standard_normal((L, K)) / np.sqrt(L)
    R = cn(rng, (L, 2))
    p = SpikeGM.from_weights(0.8, np.array([0.2]), np.array([0j]), np.array([1.0]))
    joint = gamp_slot(A, R, p.broadcast_to((K, 2)), 0.1, damping=0.8)
    one = gamp_slot(A, R[:, 1], p.broadcast_to((K,)), 0.1, damping=0.8)
    assert joint.iterations >= 1
    if joint.iterations == one.iterations:
        np.testing.assert_allclose(joint.posterior.mean[:, 1], one.posterior.mean, atol=1e-12)


def test_divergence_is_reported(rng):
    A = rng.standard_normal((5, 5))
    R = np.full(5, np.nan + 0j)
    with pytest.raises(SmdDivergence):
        gamp_slot(A, R, gaussian_prior(5), 0.1)


def test_history_and_extrinsic_shapes(rng):
    L, K, T = 10, 12, 4
    A = rng.standard_normal((L, K)) / np.sqrt(L)
    res = gamp_slot(A, cn(rng, (L, T)), gaussian_prior(K, T), 0.5)
    assert res.extrinsic.mean.shape == (K, T)
    assert np.all(res.extrinsic.var > 0)
    assert len(res.history) == res.iterations
