import numpy as np
import pytest
import yaml
from scipy.stats import binomtest

from juicesd.cli import main
from juicesd.harness import (CSV_FIELDS, ConfigError, ExperimentSpec, read_results, run_experiment,
                             spec_from_dict, table_to_csv, wilson, write_results)
from juicesd.scenario import SystemConfig

SMALL = {
    "experiment": {"kind": "snr_sweep", "trials": 6, "seed": 7, "algorithms": ["rigm", "two_phase"]},
    "system": {"K": 30, "L": 15, "T": 4, "lambda": 0.1},
    "sweep": {"snr_db": [6, 12]},
}


def _spec(**kw):
    d = yaml.safe_load(yaml.safe_dump(SMALL))
    d["experiment"].update(kw)
    return spec_from_dict(d)


@pytest.mark.parametrize("k,n", [(0, 10), (3, 10), (10, 10), (17, 400)])
def test_wilson_against_scipy(k, n):
    ref = binomtest(k, n).proportion_ci(method="wilson")
    np.testing.assert_allclose(wilson(k, n), (ref.low, ref.high), atol=1e-12)


def test_experiment_is_reproducible_and_thread_independent():
    a = table_to_csv(run_experiment(_spec()))
    b = table_to_csv(run_experiment(_spec(), threads=2))
    assert a == b
    assert a.splitlines()[0] == ",".join(CSV_FIELDS)
    assert len(a.splitlines()) == 1 + 2 * 2


def test_csv_roundtrip(tmp_path):
    table = run_experiment(_spec())
    path = write_results(table, tmp_path, _spec())
    back = read_results(path)
    assert [r["algorithm"] for r in back] == ["rigm", "two_phase"] * 2
    for r in back:
        mse = float(r["mse"])
        assert float(r["mse_db"]) == pytest.approx(10 * np.log10(mse), abs=1e-4)
        lo, hi = map(float, r["ser_ci"].split(";"))
        assert lo <= float(r["ser"]) <= hi
        assert int(r["trials"]) == 6
    assert (tmp_path / "metadata.txt").exists()
    with pytest.raises(ValueError):
        write_results([], tmp_path)


@pytest.mark.parametrize("change", [
    {"experiment": {"trials": 0}},
    {"experiment": {"algorithms": ["magic"]}},
    {"system": {"Kay": 3}},
    {"sweep": {"snr_db": []}},
    {"bogus": {}},
])
def test_bad_configs(change):
    d = yaml.safe_load(yaml.safe_dump(SMALL))
    for sec, vals in change.items():
        d.setdefault(sec, {}).update(vals)
    with pytest.raises(ConfigError):
        spec_from_dict(d)


def test_gamma_must_give_integer_length():
    base = SystemConfig(K=30, L=10, T=4, lam=0.1, snr_db=30)
    ExperimentSpec("phase_transition", base, lam=[0.1], gamma=[0.2])
    with pytest.raises(ConfigError):
        ExperimentSpec("phase_transition", base, lam=[0.1], gamma=[0.25])


def test_cli_exit_codes(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    out = tmp_path / "run"
    assert main(["sweep-snr", "--config", str(cfg), "--trials", "3", "--out", str(out), "-q"]) == 0
    assert read_results(out / "results.csv")[0]["trials"] == "3"
    assert main(["sweep-snr", "--config", str(cfg), "--trials", "0", "--out", str(out), "-q"]) == 1
    assert main(["phase-transition", "--config", str(cfg), "--out", str(out), "-q"]) == 1
    assert main(["sweep-snr", "--config", str(cfg), "--out", "/proc/juicesd", "-q"]) == 2
