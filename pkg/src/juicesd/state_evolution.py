"""Scalar MSE tracking for the RIGM receiver.

Two Monte Carlo transfer maps are coupled by a fixed-point recursion:
``tau = f_smd(v)`` for the multi-user detector and ``v = f_csce(tau)``
for the per-user channel combiner. ``v`` is the per-unit-energy MSE of
the channel messages fed back to the detector; ``tau`` is the effective
noise-plus-interference power each user sees after interference
cancellation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import csce_rigm as cr
from .kernels import abs2, spike_gm_posterior
from .receiver import ReceiverConfig, decide
from .scenario import SystemConfig, _cn, draw_pathloss_beta

GRID_POINTS = 40
SE_TOL = 1e-4
BISECT_TOL = 1e-12


# v <-> v_g -------------------------------------------------------------------


def v_from_vg(vg, beta):
    """Average shrunken variance (1/K) sum_k beta_k vg / (beta_k + vg)."""
    beta = np.asarray(beta, float)
    if np.isinf(vg):
        return float(np.mean(beta))
    return float(np.mean(beta * vg / (beta + vg)))


def vg_from_v(v, beta):
    """Invert :func:`v_from_vg` by bisection (closed form when all beta are 1).

    Returns ``inf`` once ``v`` reaches the prior bound mean(beta).
    """
    beta = np.asarray(beta, float)
    if v <= 0:
        return 0.0
    if v >= np.mean(beta):
        return np.inf
    if np.all(beta == 1.0):
        return v / (1.0 - v)
    lo, hi = 0.0, max(v, 1e-300)
    while v_from_vg(hi, beta) < v:
        hi *= 2.0
    # the map is increasing and concave, so bisection is safe
    while hi - lo > BISECT_TOL * hi:
        mid = 0.5 * (lo + hi)
        if v_from_vg(mid, beta) < v:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _sample_beta(config: SystemConfig, rng, n):
    if config.fading == "pathloss":
        return draw_pathloss_beta(rng, n)
    beta = config.beta_array()
    return np.resize(beta, n)


# transfer maps ---------------------------------------------------------------


def f_smd(v, config: SystemConfig, mc_samples=20000, seed=0, return_trace=False):
    """Detector output MSE for feedback quality ``v``.

    Channel estimates g + sqrt(v_g) zeta are turned into RIGM priors on y,
    then tau is iterated as N0 + (K-1)/L * E|E[Y | Y + sqrt(tau) e] - Y|^2
    with common random numbers until its relative change drops below 1e-4.
    """
    if mc_samples < 1000:
        raise ValueError("mc_samples must be at least 1000")
    rng = np.random.default_rng(seed)
    const = config.constellation
    n = int(mc_samples)
    beta = _sample_beta(config, rng, n)
    vg = vg_from_v(v, beta)
    u = rng.random(n) < config.lam
    g = _cn(rng, n, beta) * u
    x = const.sample(rng, n)
    Y = g * x
    if np.isinf(vg):
        msg = cr.RigmMsg(np.zeros(n, complex), np.full(n, np.inf), const.omega_order, const.theta0)
    else:
        msg = cr.RigmMsg(g + np.sqrt(vg) * _cn(rng, n), np.full(n, vg), const.omega_order, const.theta0)
    prior = cr.rigm_emit_y(msg, config.lam, beta, const)
    eps = _cn(rng, n)
    load = (config.K - 1) / config.L
    N0 = config.N0
    tau = N0 + load * float(np.mean(prior.second_moment()))
    trace = [tau]
    for _ in range(200):
        post = spike_gm_posterior(prior, Y + np.sqrt(tau) * eps, np.full(n, tau))
        new = N0 + load * float(np.mean(abs2(post.mean - Y)))
        trace.append(new)
        done = abs(new - tau) < SE_TOL * tau
        tau = new
        if done:
            break
    return (tau, trace) if return_trace else tau


def _active_extrinsics(tau, config: SystemConfig, n, rng):
    const = config.constellation
    beta = _sample_beta(config, rng, n)
    h = _cn(rng, n, beta)
    X = const.sample(rng, (n, config.T))
    X[:, : config.n_rs] = const.reference_symbol
    r = h[:, None] * X + np.sqrt(tau) * _cn(rng, (n, config.T))
    return beta, h, X, r


def f_csce(tau, config: SystemConfig, mc_samples=5000, seed=0):
    """Channel-message MSE ``v`` for detector output MSE ``tau``.

    Only active users are simulated; their leave-one-out RIGM variances
    are averaged and mapped through the v_g -> v relation.
    """
    if tau <= 0:
        return 0.0
    rng = np.random.default_rng(seed)
    n = int(mc_samples)
    beta, _, _, r = _active_extrinsics(tau, config, n, rng)
    msg = cr.rigm_leave_one_out(r, np.full(r.shape, tau), config.constellation)
    vg = float(np.mean(msg.common_var))
    return v_from_vg(vg, beta)


# tables ----------------------------------------------------------------------


@dataclass
class TransferTable:
    """Sampled transfer map with monotone piecewise-linear interpolation."""

    kind: str
    grid: np.ndarray
    values: np.ndarray
    raw: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __call__(self, x):
        return float(np.interp(x, self.grid, self.values))

    @property
    def max_violation(self):
        """Largest drop in the raw samples that monotone repair removed."""
        return float(np.max(self.values - self.raw))

    def save(self, path):
        lines = ["# juicesd transfer table v1"]
        for k, val in sorted(self.provenance.items()):
            lines.append(f"# {k}: {json.dumps(val)}")
        lines.append(f"# kind: {self.kind}")
        lines.append("x,y,raw")
        for x, y, r in zip(self.grid, self.values, self.raw):
            lines.append(f"{float(x)!r},{float(y)!r},{float(r)!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        prov, kind, rows = {}, None, []
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("# kind: "):
                    kind = line[len("# kind: "):]
                elif line.startswith("# ") and ": " in line:
                    k, val = line[2:].split(": ", 1)
                    prov[k] = json.loads(val)
                elif line and not line.startswith("#") and not line.startswith("x,"):
                    rows.append([float(t) for t in line.split(",")])
        a = np.array(rows)
        return cls(kind, a[:, 0], a[:, 1], a[:, 2], prov)


def _config_hash(config, extra):
    blob = json.dumps([config.as_dict(), extra], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def build_tables(config: SystemConfig, smd_samples=20000, csce_samples=5000, seed=0,
                 n_points=GRID_POINTS):
    """Sample both transfer maps on log-spaced grids.

    Each grid point uses its own seed derived from (seed, map, index).
    Outputs are made non-decreasing with a running maximum.
    """
    vmax = float(np.mean(config.beta_array())) if config.fading == "none" else 1.0
    if config.fading == "pathloss":
        vmax = float(np.mean(_sample_beta(config, np.random.default_rng(seed), 100000)))
    v_grid = np.geomspace(vmax * 1e-5, vmax, n_points)
    N0 = config.N0
    tau_max = N0 + (config.K - 1) / config.L * config.lam * vmax
    tau_grid = np.geomspace(N0 * 0.5, tau_max * 1.5, n_points)
    ss = np.random.SeedSequence(seed)
    seeds = ss.spawn(2)
    s_smd = [int(s.generate_state(1)[0]) for s in seeds[0].spawn(n_points)]
    s_csce = [int(s.generate_state(1)[0]) for s in seeds[1].spawn(n_points)]
    raw_smd = np.array([f_smd(v, config, smd_samples, s) for v, s in zip(v_grid, s_smd)])
    raw_csce = np.array([f_csce(t, config, csce_samples, s) for t, s in zip(tau_grid, s_csce)])
    prov = {"config_hash": _config_hash(config, [smd_samples, csce_samples]), "seed": seed}
    smd = TransferTable("f_smd", v_grid, np.maximum.accumulate(raw_smd), raw_smd,
                        dict(prov, samples=smd_samples))
    csce = TransferTable("f_csce", tau_grid, np.maximum.accumulate(raw_csce), raw_csce,
                         dict(prov, samples=csce_samples))
    return smd, csce


# fixed point -----------------------------------------------------------------


@dataclass
class SEResult:
    v_sequence: list
    tau_sequence: list
    v: float
    tau: float
    mse: float
    ser: float
    aer_active: float

    @property
    def mse_db(self):
        return 10 * np.log10(self.mse) if self.mse > 0 else -np.inf


def se_fixed_point(config: SystemConfig, tables=None, smd_samples=20000, csce_samples=5000,
                   seed=0, max_iter=100, decision_samples=20000, rc: ReceiverConfig | None = None):
    """Iterate v <- f_csce(f_smd(v)) from v0 = mean(beta).

    With ``tables`` the interpolated maps are used; otherwise each map is
    evaluated directly with fixed seeds (common random numbers). The
    predicted SER and MSE come from running the receiver's decision chain
    on synthetic active-user extrinsics at the fixed point, scaled by the
    activity probability since inactive users are assumed error free.
    """
    beta = config.beta_array()
    v = float(np.mean(beta))
    if tables is not None:
        fs, fc = tables
        smd = fs
        csce = fc
    else:
        def smd(x):
            return f_smd(x, config, smd_samples, seed)

        def csce(t):
            return f_csce(t, config, csce_samples, seed + 1)
    vs, taus = [v], []
    for _ in range(max_iter):
        tau = smd(v)
        new = csce(tau)
        taus.append(tau)
        vs.append(new)
        if abs(new - v) < SE_TOL * max(v, 1e-300):
            v = new
            break
        v = new
    tau = taus[-1]
    mse_a, ser_a, aer_a = predicted_metrics(tau, config, decision_samples, seed + 2, rc)
    return SEResult(vs, taus, v, tau, config.lam * mse_a, config.lam * ser_a, aer_a)


def predicted_metrics(tau, config: SystemConfig, n=20000, seed=0, rc=None):
    """(channel MSE, SER, miss rate) of active users at detector MSE ``tau``."""
    rc = rc or ReceiverConfig()
    rng = np.random.default_rng(seed)
    beta, h, X, r = _active_extrinsics(tau, config, n, rng)
    v = np.full(r.shape, tau)
    sub = config.replace(K=n, beta=None, fading="none")
    prior = cr.rigm_emit_y(cr.rigm_leave_one_out(r, v, config.constellation), config.lam,
                           beta[:, None], config.constellation)
    _, g_hat, _, u_hat, _, x_idx = decide("rigm", r, v, prior, sub, beta, rc)
    true_idx = config.constellation.nearest(X[:, config.n_rs:])
    ok = (u_hat[:, None] == 1) & (x_idx == true_idx)
    return float(np.mean(abs2(h - g_hat))), float(1 - ok.mean()), float(np.mean(u_hat == 0))
