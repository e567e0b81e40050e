"""Experiment driver: config parsing, seeded Monte Carlo, aggregation and CSV output.

Every trial draws its frame from ``SeedSequence([seed, point, trial])``,
so results do not depend on how trials are spread over workers. All
algorithms at a grid point see the same frames.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import yaml
from scipy.stats import norm

from . import state_evolution as se
from .baselines import ALGORITHMS, run_algorithm
from .receiver import ReceiverConfig, compute_metrics
from .scenario import SystemConfig, generate_frame

KINDS = ("snr_sweep", "phase_transition", "se_compare", "nrs_sweep", "large_scale_fading")
CSV_FIELDS = ("experiment_id", "algorithm", "K", "L", "T", "lambda", "n_rs", "snr_db", "trials",
              "aer", "aer_ci", "ser", "ser_ci", "mse_db", "seed", "config_hash",
              "mse", "failed_trials", "success")
MAX_FAIL_FRACTION = 0.01
CHUNK = 25
ROUND = 200  # trials per point between stop-rule checks, fixed so results ignore --threads


class ConfigError(ValueError):
    """Invalid experiment description."""


class ExperimentFailed(RuntimeError):
    """Too many trials raised at some grid point."""

    def __init__(self, msg, table=None):
        super().__init__(msg)
        self.table = table


@dataclass
class ExperimentSpec:
    kind: str
    base: SystemConfig
    snr_db: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    n_rs: list = field(default_factory=list)
    algorithms: list = field(default_factory=lambda: ["rigm"])
    trials: int = 100
    seed: int = 0
    target_ci: float | None = None
    ser_th: float = 1e-3
    receiver: ReceiverConfig = field(default_factory=ReceiverConfig)
    se_samples: dict = field(default_factory=lambda: {"smd": 20000, "csce": 5000, "decision": 20000})
    experiment_id: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        if not self.algorithms:
            raise ConfigError("no algorithms given")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ConfigError(f"unknown algorithms {bad}; choose from {list(ALGORITHMS)}")
        if self.kind == "phase_transition":
            if not self.lam or not self.gamma:
                raise ConfigError("phase_transition needs non-empty lambda and gamma lists")
            for g in self.gamma:
                L = int(round(g * self.base.K))
                if L < 1 or abs(g * self.base.K - L) > 1e-9 * self.base.K:
                    raise ConfigError(f"gamma={g} does not give an integer L for K={self.base.K}")
        elif not self.snr_db:
            raise ConfigError(f"{self.kind} needs a non-empty snr_db list")
        if self.kind == "nrs_sweep" and not self.n_rs:
            raise ConfigError("nrs_sweep needs a non-empty n_rs list")
        if self.target_ci is not None and self.target_ci <= 0:
            raise ConfigError("target_ci must be positive")

    def points(self):
        """Grid points as SystemConfig objects, in a fixed order."""
        b = self.base
        if self.kind == "phase_transition":
            snr = self.snr_db[0] if self.snr_db else b.snr_db
            return [b.replace(L=int(round(g * b.K)), lam=lam, snr_db=snr)
                    for g in self.gamma for lam in self.lam]
        if self.kind == "nrs_sweep":
            return [b.replace(n_rs=n, snr_db=s) for n in self.n_rs for s in self.snr_db]
        if self.kind == "large_scale_fading":
            return [b.replace(snr_db=s, fading="pathloss") for s in self.snr_db]
        return [b.replace(snr_db=s) for s in self.snr_db]

    def as_dict(self):
        return {
            "experiment_id": self.experiment_id, "kind": self.kind, "system": self.base.as_dict(),
            "snr_db": self.snr_db, "lambda": self.lam, "gamma": self.gamma, "n_rs": self.n_rs,
            "algorithms": self.algorithms, "trials": self.trials, "seed": self.seed,
            "target_ci": self.target_ci, "ser_th": self.ser_th, "receiver": self.receiver.as_dict(),
            "se_samples": self.se_samples,
        }


# config files -----------------------------------------------------------------

_SYSTEM_KEYS = {"K": "K", "L": "L", "T": "T", "lambda": "lam", "snr_db": "snr_db", "n_rs": "n_rs",
                "constellation": "constellation", "fading": "fading", "beta": "beta",
                "freeze_A": "freeze_A", "a_seed": "a_seed"}


def spec_from_dict(d, kind=None) -> ExperimentSpec:
    """Build a spec from the nested mapping documented in the README."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    exp = dict(d.get("experiment", {}))
    sysd = dict(d.get("system", {}))
    sweep = dict(d.get("sweep", {}))
    recv = dict(d.get("receiver", {}))
    sed = dict(d.get("se", {}))
    unknown = set(d) - {"experiment", "system", "sweep", "receiver", "se"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    k = exp.pop("kind", kind)
    if kind is not None and k != kind:
        raise ConfigError(f"config kind {k!r} does not match subcommand kind {kind!r}")
    try:
        skw = {_SYSTEM_KEYS[key]: val for key, val in sysd.items()}
    except KeyError as e:
        raise ConfigError(f"unknown system key {e.args[0]!r}") from None
    skw.setdefault("snr_db", (sweep.get("snr_db") or [10.0])[0])
    try:
        base = SystemConfig(**skw)
        rc = ReceiverConfig(**recv)
        spec = ExperimentSpec(
            kind=k, base=base,
            snr_db=[float(x) for x in sweep.get("snr_db", [])],
            lam=[float(x) for x in sweep.get("lambda", [])],
            gamma=[float(x) for x in sweep.get("gamma", [])],
            n_rs=[int(x) for x in sweep.get("n_rs", [])],
            algorithms=list(exp.pop("algorithms", ["rigm"])),
            trials=int(exp.pop("trials", 100)),
            seed=int(exp.pop("seed", 0)),
            target_ci=exp.pop("target_ci", None),
            ser_th=float(exp.pop("ser_th", 1e-3)),
            receiver=rc,
            se_samples={"smd": int(sed.get("smd_samples", 20000)),
                        "csce": int(sed.get("csce_samples", 5000)),
                        "decision": int(sed.get("decision_samples", 20000))},
            experiment_id=str(exp.pop("id", k)),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e
    if exp:
        raise ConfigError(f"unknown experiment keys {sorted(exp)}")
    return spec


def load_spec(path, kind=None) -> ExperimentSpec:
    try:
        with open(path) as fh:
            d = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return spec_from_dict(d or {}, kind)


def default_spec(kind) -> ExperimentSpec:
    """Desk-scale defaults for each experiment kind."""
    qpsk = dict(T=7, n_rs=1, constellation="qpsk")
    if kind == "snr_sweep":
        return ExperimentSpec(kind, SystemConfig(K=200, L=50, lam=0.1, snr_db=0.0, **qpsk),
                              snr_db=[0, 2, 4, 6, 8, 10, 12], algorithms=["rigm", "ga", "two_phase"],
                              trials=2000, experiment_id="snr_sweep")
    if kind == "phase_transition":
        return ExperimentSpec(kind, SystemConfig(K=500, L=50, lam=0.1, snr_db=35.0, **qpsk),
                              snr_db=[35.0], lam=[0.05, 0.1, 0.15, 0.2], gamma=[0.1, 0.2, 0.3],
                              trials=50, receiver=ReceiverConfig(Q_outer=30),
                              experiment_id="phase_transition")
    if kind == "se_compare":
        return ExperimentSpec(kind, SystemConfig(K=500, L=125, lam=0.1, snr_db=4.0, **qpsk),
                              snr_db=[4, 6, 8, 10, 12], algorithms=["rigm"], trials=100,
                              experiment_id="se_compare")
    if kind == "nrs_sweep":
        return ExperimentSpec(kind, SystemConfig(K=200, L=50, lam=0.1, snr_db=10.0, **qpsk),
                              snr_db=[10.0], n_rs=[1, 2, 3], algorithms=["rigm"], trials=500,
                              experiment_id="nrs_sweep")
    if kind == "large_scale_fading":
        return ExperimentSpec(kind, SystemConfig(K=200, L=50, lam=0.1, snr_db=10.0, fading="pathloss",
                                                 **qpsk),
                              snr_db=[10, 15, 20, 25], algorithms=["rigm", "two_phase"], trials=200,
                              experiment_id="large_scale_fading")
    raise ConfigError(f"unknown experiment kind {kind!r}")


# Monte Carlo ------------------------------------------------------------------


def trial_seed(master, point, trial):
    return np.random.SeedSequence([int(master), int(point), int(trial)])


def _run_chunk(args):
    """Trials [lo, hi) of one point; returns per-algorithm lists of tuples."""
    config, algorithms, rc, master, point, lo, hi = args
    out = {a: [] for a in algorithms}
    for t in range(lo, hi):
        truth = generate_frame(config, trial_seed(master, point, t))
        for a in algorithms:
            try:
                m = compute_metrics(run_algorithm(a, truth, config, rc), truth, config.n_rs)
                out[a].append((t, m.aer, m.symbol_errors, m.symbols, m.mse_g, None))
            except Exception as e:  # recorded per trial, judged per point
                out[a].append((t, np.nan, 0, 0, np.nan, f"{type(e).__name__}: {e}"))
    return point, out


def wilson(k, n, conf=0.95):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return (np.nan, np.nan)
    z = norm.ppf(0.5 + conf / 2)
    p = k / n
    den = 1 + z * z / n
    c = (p + z * z / (2 * n)) / den
    h = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, c - h), min(1.0, c + h))


def _fmt_ci(ci):
    return f"{ci[0]:.6g};{ci[1]:.6g}"


def _aggregate(records):
    ok = [r for r in sorted(records) if r[5] is None]
    n = len(ok)
    fails = len(records) - n
    if n == 0:
        return dict(trials=0, aer=np.nan, aer_ci=(np.nan, np.nan), ser=np.nan,
                    ser_ci=(np.nan, np.nan), mse=np.nan, failed=fails)
    k_aer = int(round(sum(r[1] for r in ok)))
    errs = sum(r[2] for r in ok)
    syms = sum(r[3] for r in ok)
    mse = float(np.mean([r[4] for r in ok]))
    return dict(trials=n, aer=k_aer / n, aer_ci=wilson(k_aer, n), ser=errs / syms if syms else np.nan,
                ser_ci=wilson(errs, syms), mse=mse, failed=fails)


def row_hash(config: SystemConfig, rc: ReceiverConfig) -> str:
    """Short hash of the system and receiver settings behind one row."""
    blob = json.dumps([config.as_dict(), rc.as_dict()], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _row(spec, config, algorithm, agg, success=""):
    mse = agg["mse"]
    return {
        "experiment_id": spec.experiment_id, "algorithm": algorithm, "K": config.K, "L": config.L,
        "T": config.T, "lambda": f"{config.lam:.6g}", "n_rs": config.n_rs,
        "snr_db": f"{config.snr_db:.6g}", "trials": agg["trials"], "aer": f"{agg['aer']:.6g}",
        "aer_ci": _fmt_ci(agg["aer_ci"]), "ser": f"{agg['ser']:.6g}", "ser_ci": _fmt_ci(agg["ser_ci"]),
        "mse_db": f"{10 * np.log10(mse):.6g}" if mse > 0 else "-inf", "seed": spec.seed,
        "config_hash": row_hash(config, spec.receiver), "mse": f"{mse:.6g}", "failed_trials": agg["failed"],
        "success": success,
    }


def _simulate(spec, configs, threads=1, log=None):
    """Run every point; returns {point: {algorithm: [records]}}."""
    results = {p: {a: [] for a in spec.algorithms} for p in range(len(configs))}
    pending = {p: 0 for p in range(len(configs))}
    ex = ProcessPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        while pending:
            jobs = []
            for p, done in sorted(pending.items()):
                hi = min(done + ROUND, spec.trials)
                for lo in range(done, hi, CHUNK):
                    jobs.append((configs[p], spec.algorithms, spec.receiver, spec.seed, p, lo,
                                 min(lo + CHUNK, hi)))
                pending[p] = hi
            outs = ex.map(_run_chunk, jobs) if ex else map(_run_chunk, jobs)
            for p, out in outs:
                for a, recs in out.items():
                    results[p][a].extend(recs)
            for p in list(pending):
                if pending[p] >= spec.trials or _converged(spec, results[p]):
                    del pending[p]
                    if log:
                        log(f"point {p + 1}/{len(configs)} done ({len(results[p][spec.algorithms[0]])} trials)")
    finally:
        if ex:
            ex.shutdown()
    return results


def _converged(spec, res):
    if spec.target_ci is None:
        return False
    for recs in res.values():
        agg = _aggregate(recs)
        lo, hi = agg["ser_ci"]
        if not (hi - lo <= spec.target_ci):
            return False
    return True


def run_experiment(spec: ExperimentSpec, threads=1, log=None, table_dir=None):
    """Run all grid points and return the result table (list of row dicts).

    Raises :class:`ExperimentFailed` (carrying the table) when more than
    1% of the trials at any point raised.
    """
    spec.validate()
    configs = spec.points()
    results = _simulate(spec, configs, threads, log)
    table, failed = [], []
    for p, config in enumerate(configs):
        for a in spec.algorithms:
            agg = _aggregate(results[p][a])
            success = ""
            if spec.kind == "phase_transition":
                success = str(int(agg["ser"] < spec.ser_th))
            table.append(_row(spec, config, a, agg, success))
            if agg["failed"] > MAX_FAIL_FRACTION * (agg["trials"] + agg["failed"]):
                first = next(r[5] for r in results[p][a] if r[5] is not None)
                failed.append(f"point {p} ({a}): {agg['failed']} failed trials, first: {first}")
        if spec.kind == "se_compare":
            table.append(_se_row(spec, config, p, table_dir))
    if failed:
        raise ExperimentFailed("; ".join(failed), table)
    return table


def _se_row(spec, config, point, table_dir=None):
    """State-evolution prediction at one point, tagged as algorithm 'se'."""
    seed = int(trial_seed(spec.seed, point, 0).generate_state(1)[0])
    s = spec.se_samples
    tables = None
    if table_dir is not None:
        tables = se.build_tables(config, s["smd"], s["csce"], seed)
        os.makedirs(table_dir, exist_ok=True)
        tables[0].save(os.path.join(table_dir, f"f_smd_p{point}.txt"))
        tables[1].save(os.path.join(table_dir, f"f_csce_p{point}.txt"))
    res = se.se_fixed_point(config, tables, s["smd"], s["csce"], seed,
                            decision_samples=s["decision"], rc=spec.receiver)
    agg = dict(trials=s["decision"], aer=np.nan, aer_ci=(np.nan, np.nan), ser=res.ser,
               ser_ci=(np.nan, np.nan), mse=res.mse, failed=0)
    return _row(spec, config, "se", agg)


# output -----------------------------------------------------------------------


def check_writable(out_dir):
    """Fail early if results could not be written to ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    probe = os.path.join(out_dir, ".write_probe")
    with open(probe, "w") as fh:
        fh.write("")
    os.remove(probe)


def table_to_csv(table) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in table:
        w.writerow(row)
    return buf.getvalue()


def write_results(table, out_dir, spec: ExperimentSpec | None = None):
    """Write ``results.csv`` and the ``metadata.txt`` sidecar; returns the CSV path."""
    if not table:
        raise ValueError("empty result table")
    check_writable(out_dir)
    path = os.path.join(out_dir, "results.csv")
    with open(path, "w", newline="") as fh:
        fh.write(table_to_csv(table))
    if spec is not None:
        with open(os.path.join(out_dir, "metadata.txt"), "w") as fh:
            fh.write(metadata_text(spec))
    return path


def read_results(path):
    """Parse a results CSV back into row dicts with string values."""
    with open(path, newline="") as fh:
        return [dict(r) for r in csv.DictReader(fh)]


def normalize_table(table):
    """Row dicts with every value as its CSV string form."""
    return [{k: str(r[k]) for k in CSV_FIELDS} for r in table]


NOTES = {
    "g_th": "c * sqrt(beta N0 / (N0 + beta)), c = receiver.g_th_scale unless receiver.g_th is set",
    "se_ser": "predicted SER/MSE from Monte Carlo of the receiver decision chain on active users "
              "at the fixed point, scaled by lambda; inactive users assumed error free",
    "two_phase": "pilot-column GAMP for activity and channel, then data GAMP with fixed channels",
    "oracle_csir": "known channels; activity from prior odds times all slot likelihood ratios, "
                   "threshold at posterior 0.5",
    "oracle_activity": "known activity; LMMSE channel from averaged pilots, per-slot LMMSE data",
    "ci": "Wilson 95% score intervals written as lo;hi",
    "success": "phase_transition only: 1 when ser < ser_th",
}


def metadata_text(spec: ExperimentSpec) -> str:
    lines = ["# juicesd experiment metadata"]
    d = spec.as_dict()
    for k in sorted(d):
        lines.append(f"{k}: {json.dumps(d[k], sort_keys=True)}")
    for k in sorted(NOTES):
        lines.append(f"note.{k}: {NOTES[k]}")
    return "\n".join(lines) + "\n"


def with_overrides(spec: ExperimentSpec, seed=None, trials=None, algorithms=None) -> ExperimentSpec:
    kw = {}
    if seed is not None:
        kw["seed"] = int(seed)
    if trials is not None:
        kw["trials"] = int(trials)
    if algorithms is not None:
        kw["algorithms"] = list(algorithms)
    try:
        return replace(spec, **kw)
    except ValueError as e:
        raise ConfigError(str(e)) from e


__all__ = [
    "ExperimentSpec", "run_experiment", "write_results", "read_results", "load_spec",
    "spec_from_dict", "default_spec", "wilson", "trial_seed", "ConfigError", "ExperimentFailed",
]
