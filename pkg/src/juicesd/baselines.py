"""Comparison receivers: two-phase detection, two oracle-aided detectors
and the Gaussian-approximation ablation.

All of them return :class:`BaselineResult`, which has the same fields as
``ReceiverOutput`` plus an algorithm tag, so ``compute_metrics`` applies
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import csce_rigm as cr
from .kernels import VAR_FLOOR, GaussMsg, SpikeGM, abs2, log_cn, logsumexp, spike_gm_posterior
from .receiver import ReceiverConfig, ReceiverOutput, activity_threshold, run_receiver
from .scenario import SystemConfig
from .smd import gamp_slot

ALGORITHMS = ("rigm", "exact", "ga", "two_phase", "oracle_csir", "oracle_activity")


@dataclass
class BaselineResult(ReceiverOutput):
    algorithm: str = ""


def _wrap(out: ReceiverOutput, algorithm) -> BaselineResult:
    fields = {k: getattr(out, k) for k in out.__dataclass_fields__}
    return BaselineResult(**fields, algorithm=algorithm)


def _result(config, u_hat, g_hat, h_hat, x_idx, soft_y, g_th, algorithm, trace=(), iters=()):
    return BaselineResult(u_hat, g_hat, h_hat, x_idx, soft_y, list(trace), g_th, config.constellation,
                          algorithm, len(trace), list(iters), algorithm=algorithm)


def _check(A, R, config):
    if A.shape != (config.L, config.K) or R.shape != (config.L, config.T):
        raise ValueError("A/R shapes do not match the config")


def _known_prior(mean, var, spike, constellation, symbols=None):
    """Per-user prior on y: spike with log weight ``spike`` plus mean * s."""
    s = constellation.points if symbols is None else np.atleast_1d(np.asarray(symbols, complex))
    mean = np.asarray(mean, complex)
    with np.errstate(divide="ignore"):
        lw = np.broadcast_to(np.log1p(-np.exp(spike)) - np.log(s.size), mean.shape)
    return SpikeGM(spike, np.broadcast_to(lw[..., None], mean.shape + (s.size,)),
                   mean[..., None] * s, np.asarray(var, float)[..., None] * abs2(s))


# two-phase --------------------------------------------------------------------


def run_two_phase(A, R, config: SystemConfig, rc: ReceiverConfig | None = None, beta=None):
    """Pilot-only activity and channel estimation, then data detection.

    Phase 1 runs GAMP over the reference columns with the spike-Gaussian
    channel prior; pilot-slot extrinsics are combined per user and the
    activity threshold is applied to the channel posterior mean. Phase 2
    runs slot-wise GAMP on the data columns with the estimated channels
    and activities held fixed. Nothing flows back from phase 2.
    """
    rc = rc or ReceiverConfig()
    _check(A, R, config)
    if config.n_rs < 1:
        raise ValueError("two-phase detection needs at least one reference symbol")
    const = config.constellation
    beta = config.beta_array() if beta is None else np.asarray(beta, float)
    K, n_rs = config.K, config.n_rs
    sp = const.reference_symbol
    N0 = config.N0

    # phase 1: y = g s_p on every pilot column
    with np.errstate(divide="ignore"):
        spike = np.full((K, n_rs), np.log1p(-config.lam))
        slab = np.full((K, n_rs, 1), np.log(config.lam))
    pilot_prior = SpikeGM(spike, slab, np.zeros((K, n_rs, 1), complex),
                          (beta * abs2(sp))[:, None, None] * np.ones((1, n_rs, 1)))
    p1 = gamp_slot(A, R[:, :n_rs], pilot_prior, N0, rc.Q, rc.damping, rc.smd_tol)
    ext = p1.extrinsic
    comb = cr.gauss_combine(GaussMsg(ext.mean / sp, ext.var / abs2(sp)))
    _, log_slab, mean, var = cr.rigm_g_posterior(cr.RigmMsg(comb.mean, comb.var, 1, 2 * np.pi),
                                                 config.lam, beta)
    g_hat = np.exp(log_slab) * mean
    g_th = activity_threshold(beta, N0, rc)
    u_hat = (np.abs(g_hat) >= g_th).astype(int)
    h_est = np.where(u_hat == 1, mean, 0.0)
    h_var = np.where(u_hat == 1, np.maximum(var, VAR_FLOOR), VAR_FLOOR)

    # phase 2: inactive users pinned to zero, active users on h_est * S
    n_data = config.n_data
    spike2 = np.where(u_hat == 1, -np.inf, 0.0)[:, None] * np.ones((1, n_data))
    data_prior = _known_prior(h_est[:, None] * np.ones((1, n_data)), h_var[:, None], spike2, const)
    p2 = gamp_slot(A, R[:, n_rs:], data_prior, N0, rc.Q, rc.damping, rc.smd_tol)
    y_mean = np.concatenate([p1.posterior.mean, p2.posterior.mean], axis=1)
    y_var = np.concatenate([p1.posterior.var, p2.posterior.var], axis=1)
    soft_y = GaussMsg(y_mean, y_var)
    x_idx = np.full((K, n_data), -1, dtype=int)
    ok = (u_hat == 1) & (h_est != 0)
    if np.any(ok):
        x_idx[ok] = const.nearest(p2.posterior.mean[ok] / h_est[ok, None])
    return _result(config, u_hat, g_hat, h_est, x_idx, soft_y, g_th, "two_phase",
                   iters=[p1.iterations, p2.iterations])


# oracle CSIR -----------------------------------------------------------------


def _slot_log_lik(r, v, h, constellation, n_rs):
    """log p(r | active) and log p(r | inactive) for known channels h."""
    s = constellation.points
    rr = r[..., None]
    vv = v[..., None]
    act = logsumexp(log_cn(rr, h[:, None, None] * s, vv), axis=-1) - np.log(s.size)
    sp = constellation.reference_symbol
    act[:, :n_rs] = log_cn(r[:, :n_rs], h[:, None] * sp, v[:, :n_rs])
    inact = log_cn(r, 0.0, v)
    return act, inact


def run_oracle_csir_amp(A, R, h, config: SystemConfig, rc: ReceiverConfig | None = None):
    """Joint activity and data detection with the channels known.

    Each slot's prior on y is {0} union h_k S (pilots: h_k s_p). Between
    slot-wise GAMP rounds, the activity belief of a slot is refreshed from
    the likelihoods of the other slots; the final activity decision
    multiplies the prior odds by all slot likelihood ratios and
    thresholds the posterior at 0.5.
    """
    rc = rc or ReceiverConfig()
    _check(A, R, config)
    const = config.constellation
    h = np.asarray(h, complex)
    K, T, n_rs = config.K, config.T, config.n_rs
    N0 = config.N0
    with np.errstate(divide="ignore"):
        prior_lo = np.log(config.lam) - np.log1p(-config.lam)
    means = h[:, None, None] * const.points
    means = np.broadcast_to(means, (K, T, const.size)).copy()
    lw_pattern = np.full((T, const.size), -np.log(const.size))
    lw_pattern[:n_rs] = -np.inf
    lw_pattern[:n_rs, const.reference_index] = 0.0
    lo = np.full((K, T), prior_lo)
    trace, iters = [], []
    res = None
    for _ in range(rc.Q_outer):
        # activity log-odds -> spike/slab weights
        log_spike = -np.logaddexp(0.0, lo)
        log_slab = -np.logaddexp(0.0, -lo)
        prior = SpikeGM(log_spike, log_slab[..., None] + lw_pattern, means, np.zeros((K, T, const.size)))
        res = gamp_slot(A, R, prior, N0, rc.Q, rc.damping, rc.smd_tol)
        iters.append(res.iterations)
        trace.append(float(np.mean(res.posterior.var)))
        act, inact = _slot_log_lik(res.extrinsic.mean, res.extrinsic.var, h, const, n_rs)
        llr = act - inact
        lo = prior_lo + llr.sum(axis=1, keepdims=True) - llr
        if len(trace) > 1 and rc.outer_tol > 0:
            if abs(trace[-1] - trace[-2]) <= rc.outer_tol * max(trace[-2], 1e-300):
                break
    total = prior_lo + llr.sum(axis=1)
    u_hat = (total >= 0).astype(int)
    g_hat = np.where(u_hat == 1, h, 0.0)
    soft_y = spike_gm_posterior(prior, res.extrinsic.mean, res.extrinsic.var)
    x_idx = np.full((K, config.n_data), -1, dtype=int)
    ok = (u_hat == 1) & (h != 0)
    if np.any(ok):
        x_idx[ok] = const.nearest(soft_y.mean[ok, n_rs:] / h[ok, None])
    return _result(config, u_hat, g_hat, g_hat.copy(), x_idx, soft_y, np.full(K, 0.5),
                   "oracle_csir", trace, iters)


# oracle activity LMMSE -------------------------------------------------------


def lmmse(H, r, prior_var, N0):
    """Linear MMSE estimate of z from r = H z + CN(0, N0 I), z ~ CN(0, diag(prior_var)).

    Uses whichever normal equations are smaller; both carry the N0 term,
    so they stay well posed when H has more columns than rows.
    """
    H = np.asarray(H, complex)
    d = np.asarray(prior_var, float)
    L, n = H.shape
    if n == 0:
        return np.zeros((0,) + r.shape[1:], complex)
    if n <= L:
        G = H.conj().T @ H + N0 * np.diag(1.0 / d)
        return linalg.solve(G, H.conj().T @ r, assume_a="her")
    C = (H * d) @ H.conj().T + N0 * np.eye(L)
    z = H.conj().T @ linalg.solve(C, r, assume_a="her")
    return d.reshape((-1,) + (1,) * (z.ndim - 1)) * z


def run_oracle_activity_lmmse(A, R, u, config: SystemConfig, beta=None):
    """Linear receiver that knows which users are active.

    Channels of the active set come from LMMSE over the averaged pilot
    columns; data symbols from per-slot LMMSE with those channels treated
    as exact, then nearest-point slicing.
    """
    _check(A, R, config)
    const = config.constellation
    beta = config.beta_array() if beta is None else np.asarray(beta, float)
    u = np.asarray(u).astype(int)
    K, n_rs, N0 = config.K, config.n_rs, config.N0
    act = np.flatnonzero(u)
    Aa = A[:, act]
    h_hat = np.zeros(K, complex)
    if n_rs > 0:
        rbar = (R[:, :n_rs] / const.reference_symbol).mean(axis=1)
        h_hat[act] = lmmse(Aa, rbar, beta[act], N0 / n_rs)
    x_idx = np.full((K, config.n_data), -1, dtype=int)
    y = np.zeros((K, config.T), complex)
    if act.size:
        xs = lmmse(Aa * h_hat[act], R[:, n_rs:], np.ones(act.size), N0)
        ok = h_hat[act] != 0
        x_idx[act[ok]] = const.nearest(xs[ok])
        y[act, n_rs:] = h_hat[act, None] * xs
        y[act, :n_rs] = h_hat[act, None] * const.reference_symbol
    soft_y = GaussMsg(y, np.zeros(y.shape))
    return _result(config, u.copy(), h_hat, h_hat.copy(), x_idx, soft_y, np.zeros(K), "oracle_activity")


# GA ablation -----------------------------------------------------------------


def run_juicesd_ga(A, R, config: SystemConfig, rc: ReceiverConfig | None = None, beta=None):
    """The joint receiver with single-Gaussian channel messages (pilots pinned)."""
    if config.n_rs < 1:
        raise ValueError("the Gaussian approximation needs at least one reference symbol")
    return _wrap(run_receiver(A, R, config, "ga", rc, beta), "ga")


def run_algorithm(name, truth, config: SystemConfig, rc: ReceiverConfig | None = None):
    """Dispatch by algorithm tag; oracles read only their declared inputs."""
    A, R, beta = truth.A, truth.R, truth.beta
    if name in ("rigm", "exact"):
        return _wrap(run_receiver(A, R, config, name, rc, beta), name)
    if name == "ga":
        return run_juicesd_ga(A, R, config, rc, beta)
    if name == "two_phase":
        return run_two_phase(A, R, config, rc, beta)
    if name == "oracle_csir":
        return run_oracle_csir_amp(A, R, truth.h, config, rc)
    if name == "oracle_activity":
        return run_oracle_activity_lmmse(A, R, truth.u, config, beta)
    raise ValueError(f"unknown algorithm {name!r}")
