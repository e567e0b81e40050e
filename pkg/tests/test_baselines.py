import numpy as np
import pytest

from juicesd.baselines import ALGORITHMS, lmmse, run_algorithm, run_oracle_activity_lmmse
from juicesd.receiver import compute_metrics
from juicesd.scenario import FrameTruth, SystemConfig, generate_frame

from conftest import cn


def _lmmse_oracle(H, r, d, N0):
    # textbook form: D H^H (H D H^H + N0 I)^{-1} r
    C = H @ np.diag(d) @ H.conj().T + N0 * np.eye(H.shape[0])
    return np.diag(d) @ H.conj().T @ np.linalg.inv(C) @ r


@pytest.mark.parametrize("L,n", [(12, 5), (5, 12)])
@pytest.mark.parametrize("cols", [1, 3])
def test_lmmse_matches_textbook(rng, L, n, cols):
    H = cn(rng, (L, n))
    r = cn(rng, (L, cols)).squeeze()
    d = rng.uniform(0.5, 2.0, n)
    np.testing.assert_allclose(lmmse(H, r, d, 0.3), _lmmse_oracle(H, r, d, 0.3), atol=1e-8)


def _frame(cfg, h, u, X, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((cfg.L, cfg.K)) / np.sqrt(cfg.L)
    R = A @ ((h * u)[:, None] * X) + noise * cn(rng, (cfg.L, cfg.T))
    return FrameTruth(A, h, u, X, None, R, cfg.beta_array())


def _symbols(cfg, rng):
    c = cfg.constellation
    X = c.sample(rng, (cfg.K, cfg.T))
    X[:, : cfg.n_rs] = c.reference_symbol
    return X


@pytest.mark.parametrize("alg", ["two_phase", "oracle_csir", "oracle_activity", "rigm", "ga"])
def test_single_user_noiseless(rng, alg):
    cfg = SystemConfig(K=1, L=10, T=6, lam=0.5, snr_db=80)
    f = _frame(cfg, np.array([1.1 + 0.4j]), np.array([1]), _symbols(cfg, rng))
    out = run_algorithm(alg, f, cfg)
    m = compute_metrics(out, f, cfg.n_rs)
    assert out.algorithm == alg
    assert m.ser == 0 and m.aer == 0


def test_oracle_csir_rejects_inactive(rng):
    cfg = SystemConfig(K=3, L=20, T=6, lam=0.3, snr_db=30)
    h = np.array([1.0, 0.8j, -0.7])
    f = _frame(cfg, h, np.array([1, 0, 1]), _symbols(cfg, rng), noise=np.sqrt(cfg.N0))
    out = run_algorithm("oracle_csir", f, cfg)
    np.testing.assert_array_equal(out.u_hat, [1, 0, 1])


def test_oracle_activity_uses_only_declared_activity(rng):
    cfg = SystemConfig(K=30, L=15, T=7, lam=0.2, snr_db=10)
    f = generate_frame(cfg, 0)
    out = run_oracle_activity_lmmse(f.A, f.R, f.u, cfg)
    np.testing.assert_array_equal(out.u_hat, f.u)
    assert np.all(out.x_idx[f.u == 0] == -1)


def test_reference_symbol_is_required():
    with pytest.raises(ValueError):
        SystemConfig(K=10, L=5, T=4, lam=0.2, snr_db=10, n_rs=0)


def test_unknown_algorithm():
    cfg = SystemConfig(K=10, L=5, T=4, lam=0.2, snr_db=10)
    with pytest.raises(ValueError):
        run_algorithm("nope", generate_frame(cfg, 0), cfg)


def test_all_algorithms_run():
    cfg = SystemConfig(K=40, L=20, T=4, lam=0.1, snr_db=10)
    f = generate_frame(cfg, 5)
    for alg in ALGORITHMS:
        out = run_algorithm(alg, f, cfg)
        assert out.x_idx.shape == (40, 3)
        assert set(np.unique(out.u_hat)) <= {0, 1}
