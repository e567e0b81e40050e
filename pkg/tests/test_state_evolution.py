import numpy as np
import pytest

from juicesd.scenario import SystemConfig
from juicesd.state_evolution import (TransferTable, build_tables, f_csce, f_smd, se_fixed_point,
                                     v_from_vg, vg_from_v)


@pytest.mark.parametrize("v,vg", [(0.5, 1.0), (0.0, 0.0), (0.2, 0.25)])
def test_vg_unit_beta(v, vg):
    assert vg_from_v(v, np.ones(10)) == pytest.approx(vg)


def test_vg_heterogeneous_roundtrip(rng):
    beta = rng.exponential(size=50)
    for v in np.geomspace(1e-4, 0.99 * beta.mean(), 7):
        assert v_from_vg(vg_from_v(v, beta), beta) == pytest.approx(v, rel=1e-10)
    assert vg_from_v(beta.mean(), beta) == np.inf
    assert v_from_vg(np.inf, beta) == pytest.approx(beta.mean())


def test_f_smd_single_user_is_noise_floor():
    cfg = SystemConfig(K=1, L=10, T=7, lam=0.1, snr_db=10)
    assert f_smd(0.3, cfg, 2000) == pytest.approx(cfg.N0)


def test_f_smd_initial_load_at_uninformative_feedback():
    cfg = SystemConfig(K=200, L=50, T=7, lam=0.1, snr_db=10)
    _, trace = f_smd(1.0, cfg, 20000, return_trace=True)
    # with no channel knowledge the prior second moment is lam * E[beta]
    assert trace[0] == pytest.approx(cfg.N0 + 199 / 50 * 0.1, rel=1e-12)
    assert trace[-1] <= trace[0]


def test_f_smd_rejects_tiny_samples():
    with pytest.raises(ValueError):
        f_smd(0.5, SystemConfig(K=10, L=5, T=3, lam=0.1, snr_db=10), 100)


def test_f_csce_limits_and_monotone():
    cfg = SystemConfig(K=200, L=50, T=7, lam=0.1, snr_db=10)
    taus = np.geomspace(1e-4, 1.0, 6)
    vs = [f_csce(t, cfg, 4000, seed=1) for t in taus]
    assert vs[0] < 1e-3
    assert np.all(np.diff(vs) > 0)
    assert f_csce(0.0, cfg) == 0.0


def test_f_csce_sample_consistency():
    cfg = SystemConfig(K=200, L=50, T=7, lam=0.1, snr_db=10)
    a = f_csce(0.1, cfg, 4000, seed=2)
    b = f_csce(0.1, cfg, 40000, seed=3)
    assert a == pytest.approx(b, rel=0.05)


def test_table_roundtrip(tmp_path):
    cfg = SystemConfig(K=100, L=25, T=5, lam=0.1, snr_db=8)
    smd, csce = build_tables(cfg, 2000, 1000, seed=4, n_points=6)
    for t in (smd, csce):
        assert np.all(np.diff(t.values) >= 0)
        assert t.max_violation >= 0
        p = tmp_path / f"{t.kind}.csv"
        t.save(p)
        back = TransferTable.load(p)
        assert back.kind == t.kind and back.provenance == t.provenance
        np.testing.assert_array_equal(back.grid, t.grid)
        np.testing.assert_array_equal(back.values, t.values)
        assert back(t.grid[2] * 1.01) == t(t.grid[2] * 1.01)


def test_fixed_point_sequence():
    cfg = SystemConfig(K=200, L=50, T=7, lam=0.1, snr_db=10)
    res = se_fixed_point(cfg, smd_samples=5000, csce_samples=3000, decision_samples=5000)
    assert res.v_sequence[0] == 1.0
    assert np.all(np.diff(res.v_sequence) <= 1e-12)
    assert 0 < res.ser < cfg.lam
    assert res.mse_db < -10
