"""Rotationally invariant Gaussian-mixture (RIGM) approximation of the
per-user channel messages.

A RIGM over g has |Omega| equally weighted components with one shared
variance whose means are rotations of a single base mean. Only the base
mean and the variance are stored; everything broadcasts over a batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constellation import Constellation
from .kernels import VAR_FLOOR, GaussMsg, NumericalDegeneracyError, SpikeGM, abs2


@dataclass
class RigmMsg:
    base_mean: np.ndarray
    common_var: np.ndarray
    omega_order: int
    theta0: float

    def __post_init__(self):
        self.base_mean = np.asarray(self.base_mean, complex)
        self.common_var = np.asarray(self.common_var, float)

    def component_means(self):
        """(..., |Omega|) array of exp(1j*i*theta0) * base_mean."""
        rot = np.exp(1j * self.theta0 * np.arange(self.omega_order))
        return self.base_mean[..., None] * rot

    def density(self, g):
        mu = self.component_means()
        v = self.common_var[..., None]
        g = np.asarray(g)[..., None]
        return np.mean(np.exp(-abs2(g - mu) / v) / (np.pi * v), axis=-1)

    def __getitem__(self, idx):
        return RigmMsg(self.base_mean[idx], self.common_var[idx], self.omega_order, self.theta0)


def rigm_init(r_hat, v_r, constellation: Constellation) -> RigmMsg:
    """Fit a RIGM to one slot message by moment matching each phase subset.

    Only the first subset is evaluated; the other subsets give rotated
    copies of the same mean and the same variance.
    """
    s1 = constellation.base_subset
    r = np.asarray(r_hat, complex)[..., None]
    v = np.asarray(v_r, float)[..., None]
    mu = r / s1
    base = mu.mean(axis=-1)
    var = np.mean(v / abs2(s1) + abs2(mu), axis=-1) - abs2(base)
    return RigmMsg(base, np.maximum(var, VAR_FLOOR), constellation.omega_order, constellation.theta0)


def rigm_absorb(current: RigmMsg, r_hat, v_r, constellation: Constellation) -> RigmMsg:
    """Multiply the base component by a full slot message and moment-match.

    The remaining components follow by rotation. Slots with ``v_r = inf``
    leave the message unchanged.
    """
    s = constellation.points
    base = current.base_mean[..., None]
    vg = current.common_var[..., None]
    r = np.asarray(r_hat, complex)[..., None]
    v = np.asarray(v_r, float)[..., None]
    flat = np.isinf(v[..., 0])
    v = np.where(np.isinf(v), 1.0, v)
    vs = v / abs2(s)
    d = vg + vs
    rs = r / s
    logw = -np.log(np.pi * d) - abs2(base - rs) / d
    m = logw.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise NumericalDegeneracyError(
            f"all absorption weights underflow; base_mean={current.base_mean!r}, "
            f"common_var={current.common_var!r}, r_hat={r_hat!r}, v_r={v_r!r}"
        )
    w = np.exp(logw - m)
    w /= w.sum(axis=-1, keepdims=True)
    mu = (base * vs + vg * rs) / d
    tau = vg * vs / d
    new_mean = (w * mu).sum(axis=-1)
    new_var = (w * (tau + abs2(mu))).sum(axis=-1) - abs2(new_mean)
    new_var = np.maximum(new_var, VAR_FLOOR)
    new_mean = np.where(flat, current.base_mean, new_mean)
    new_var = np.where(flat, current.common_var, new_var)
    return RigmMsg(new_mean, new_var, current.omega_order, current.theta0)


def _uninformative(shape, constellation):
    return RigmMsg(np.zeros(shape, complex), np.full(shape, np.inf),
                   constellation.omega_order, constellation.theta0)


def rigm_combine(r_hat, v_r, constellation: Constellation) -> RigmMsg:
    """RIGM fit of the product of all slot messages along the last axis."""
    r_hat = np.asarray(r_hat, complex)
    v_r = np.asarray(v_r, float)
    T = r_hat.shape[-1]
    msg = None
    for t in range(T):
        if msg is None:
            if np.all(np.isinf(v_r[..., t])):
                continue
            msg = rigm_init(r_hat[..., t], v_r[..., t], constellation)
        else:
            msg = rigm_absorb(msg, r_hat[..., t], v_r[..., t], constellation)
    if msg is None:
        return _uninformative(r_hat.shape[:-1], constellation)
    return msg


def leave_one_out_order(T):
    """(T, T-1) index array; row t lists the other slots in ascending order."""
    idx = np.arange(T)
    return np.stack([np.delete(idx, t) for t in range(T)])


def rigm_leave_one_out(r_hat, v_r, constellation: Constellation) -> RigmMsg:
    """Per-slot extrinsic RIGM messages.

    Parameters
    ----------
    r_hat, v_r : (..., T) arrays
        Slot extrinsics.

    Returns
    -------
    RigmMsg with batch (..., T); entry t combines every slot except t,
    starting from the smallest included index. Cost is O(T^2) absorptions.
    """
    r_hat = np.asarray(r_hat, complex)
    v_r = np.asarray(v_r, float)
    T = r_hat.shape[-1]
    if T < 2:
        raise ValueError("leave-one-out needs at least two slots")
    order = leave_one_out_order(T)
    # gather to (..., T, T-1) and run all T recursions side by side
    rr = r_hat[..., order]
    vv = v_r[..., order]
    return rigm_combine(rr, vv, constellation)


def rigm_g_posterior(msg: RigmMsg, lam, beta):
    """Channel posterior under the prior (1-lam) delta + lam CN(0, beta).

    Returns ``(log_spike, log_slab, mean, var)`` where mean/var belong to
    the base component; the other components are its rotations.
    """
    g = msg.base_mean
    v = msg.common_var
    beta = np.asarray(beta, float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inf = np.isinf(v)
        vv = np.where(inf, 1.0, v)
        log_ratio = (np.log(lam) - np.log1p(-lam) + np.log(vv) - np.log(vv + beta)
                     + abs2(g) * (1.0 / vv - 1.0 / (vv + beta)))
        # flat channel message: the prior odds pass through unchanged
        log_ratio = np.where(inf, np.log(lam) - np.log1p(-lam), log_ratio)
    # w = 1/(1+exp(log_ratio)) in log domain
    log_spike = -np.logaddexp(0.0, log_ratio)
    log_slab = -np.logaddexp(0.0, -log_ratio)
    mean = np.where(inf, 0.0, g * beta / (beta + vv))
    var = np.where(inf, beta, beta * vv / (beta + vv))
    return log_spike, log_slab, mean, var


def rigm_emit_y(msg: RigmMsg, lam, beta, constellation: Constellation, symbols=None) -> SpikeGM:
    """Spike-plus-mixture message to y = g x from a RIGM channel message.

    The channel prior is (1-lam) delta + lam CN(0, beta). With
    ``symbols`` the pushforward uses only those points (pilot pinning).
    """
    log_spike, log_slab, mean, var = rigm_g_posterior(msg, lam, beta)
    s = constellation.points if symbols is None else np.atleast_1d(np.asarray(symbols, complex))
    means = mean[..., None] * s
    vars = var[..., None] * abs2(s)
    lw = np.broadcast_to(log_slab[..., None] - np.log(s.size), means.shape)
    return SpikeGM(log_spike, lw, means, vars)


# Gaussian approximation (pilot-pinned), used by the GA ablation -------------


def ga_slot_messages(r_hat, v_r, constellation: Constellation, n_rs) -> GaussMsg:
    """Single-Gaussian slot messages over g.

    Pilot slots (t < n_rs) use the known symbol; data slots moment-match
    the full |S|-component message, whose mean vanishes for symmetric
    constellations.
    """
    s = constellation.points
    r = np.asarray(r_hat, complex)
    v = np.asarray(v_r, float)
    inv = 1.0 / s
    mean = r * inv.mean()
    second = np.mean(v[..., None] / abs2(s) + abs2(r[..., None] * inv), axis=-1)
    var = second - abs2(mean)
    sp = constellation.reference_symbol
    mean[..., :n_rs] = r[..., :n_rs] / sp
    var[..., :n_rs] = v[..., :n_rs] / abs2(sp)
    return GaussMsg(mean, np.maximum(var, VAR_FLOOR))


def gauss_leave_one_out(msgs: GaussMsg):
    """Per-slot products of all other Gaussian messages along the last axis."""
    prec = 1.0 / msgs.var
    pm = msgs.mean * prec
    P = prec.sum(axis=-1, keepdims=True) - prec
    M = pm.sum(axis=-1, keepdims=True) - pm
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(P > 0, 1.0 / P, np.inf)
        mean = np.where(P > 0, M * var, 0.0)
    return GaussMsg(mean, var)


def gauss_combine(msgs: GaussMsg):
    prec = (1.0 / msgs.var).sum(axis=-1)
    return GaussMsg((msgs.mean / msgs.var).sum(axis=-1) / prec, 1.0 / prec)
