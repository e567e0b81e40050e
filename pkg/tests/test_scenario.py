import numpy as np
import pytest

from juicesd.scenario import SystemConfig, generate_frame, g_prior, prior_messages, y_prior


def test_frame_shapes_and_model():
    cfg = SystemConfig(K=30, L=12, T=5, lam=0.3, snr_db=10)
    f = generate_frame(cfg, 1)
    assert f.A.shape == (12, 30) and f.R.shape == (12, 5) and f.X.shape == (30, 5)
    np.testing.assert_allclose(f.R, f.A @ f.Y + f.W)
    np.testing.assert_array_equal(f.X[:, 0], cfg.constellation.reference_symbol)
    assert set(np.unique(f.u)) <= {0, 1}


def test_same_seed_same_frame():
    cfg = SystemConfig(K=20, L=10, T=4, lam=0.2, snr_db=5)
    a, b = generate_frame(cfg, 7), generate_frame(cfg, 7)
    np.testing.assert_array_equal(a.R, b.R)
    assert not np.array_equal(a.R, generate_frame(cfg, 8).R)


def test_statistics():
    cfg = SystemConfig(K=400, L=100, T=3, lam=0.25, snr_db=6)
    fs = [generate_frame(cfg, s) for s in range(30)]
    u = np.concatenate([f.u for f in fs])
    assert abs(u.mean() - 0.25) < 0.02
    A = fs[0].A
    assert abs(np.mean(A ** 2) * cfg.L - 1) < 0.02
    W = np.concatenate([f.W.ravel() for f in fs])
    assert abs(np.mean(np.abs(W) ** 2) / cfg.N0 - 1) < 0.05


def test_frozen_spreading():
    cfg = SystemConfig(K=10, L=5, T=2, lam=0.5, snr_db=0, freeze_A=True, a_seed=3)
    np.testing.assert_array_equal(generate_frame(cfg, 1).A, generate_frame(cfg, 2).A)


def test_pathloss_gains_normalized_to_cell_edge():
    cfg = SystemConfig(K=2000, L=100, T=2, lam=0.1, snr_db=0, fading="pathloss")
    b = generate_frame(cfg, 0).beta
    assert b.min() >= 1.0 - 1e-12
    assert b.max() > 10


@pytest.mark.parametrize("kw", [dict(K=0), dict(n_rs=0), dict(T=1, n_rs=2), dict(lam=1.5),
                                dict(fading="rician"), dict(beta=(1.0,)), dict(snr_db=np.inf)])
def test_invalid_configs(kw):
    base = dict(K=4, L=4, T=3, lam=0.1, snr_db=0)
    base.update(kw)
    with pytest.raises(ValueError):
        SystemConfig(**base)


def test_priors_are_normalized_and_match_moments():
    cfg = SystemConfig(K=3, L=2, T=2, lam=0.2, snr_db=0, beta=(1.0, 2.0, 0.5))
    gp, yp = prior_messages(cfg)
    np.testing.assert_allclose(gp.total_mass(), 1)
    np.testing.assert_allclose(yp.total_mass(), 1)
    np.testing.assert_allclose(gp.second_moment(), 0.2 * np.array([1.0, 2.0, 0.5]))
    np.testing.assert_allclose(yp.second_moment(), gp.second_moment())
    assert g_prior(cfg).n_components == 1
    assert y_prior(cfg).n_components == 4


def test_config_hash_tracks_parameters():
    a = SystemConfig(K=4, L=4, T=3, lam=0.1, snr_db=0)
    assert a.config_hash() == SystemConfig(K=4, L=4, T=3, lam=0.1, snr_db=0).config_hash()
    assert a.config_hash() != a.replace(snr_db=1).config_hash()
