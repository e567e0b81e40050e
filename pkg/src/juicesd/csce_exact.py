"""Exact per-user combination of slot messages over the effective channel g.

A :class:`GMessage` is a Gaussian mixture over g. When ``omega_order`` is
m > 1 each stored component stands for its whole rotation orbit,

    density(g) = sum_c w_c * (1/m) * sum_i CN(g; mu_c * exp(1j*i*theta0), tau_c),

which is how rotation-invariant products are kept |Omega| times smaller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constellation import Constellation
from .kernels import SpikeGM, abs2, log_cn, logsumexp

PRUNE_REL = 1e-15
ENUM_CAP = 10 ** 6


class EnumerationInfeasible(RuntimeError):
    pass


class OracleCoverageError(RuntimeError):
    pass


@dataclass
class GMessage:
    log_weights: np.ndarray
    means: np.ndarray
    vars: np.ndarray
    omega_order: int = 1
    theta0: float = 2 * np.pi

    def __post_init__(self):
        self.log_weights = np.asarray(self.log_weights, float)
        self.means = np.asarray(self.means, complex)
        self.vars = np.asarray(self.vars, float)

    @property
    def n_components(self):
        return self.log_weights.shape[-1]

    @property
    def batch_shape(self):
        return self.log_weights.shape[:-1]

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def uninformative(self):
        return np.all(np.isinf(self.vars))

    def expanded(self) -> "GMessage":
        """Explicit form with every orbit member listed (omega_order 1)."""
        m = self.omega_order
        if m == 1:
            return self
        rot = np.exp(1j * self.theta0 * np.arange(m))
        sh = self.batch_shape + (self.n_components * m,)
        means = (self.means[..., :, None] * rot).reshape(sh)
        lw = np.repeat(self.log_weights - np.log(m), m, axis=-1).reshape(sh)
        vars = np.repeat(self.vars, m, axis=-1).reshape(sh)
        return GMessage(lw, means, vars, 1, 2 * np.pi)

    def density(self, g):
        e = self.expanded()
        g = np.asarray(g)[..., None]
        with np.errstate(divide="ignore"):
            return np.exp(logsumexp(e.log_weights + log_cn(g, e.means, e.vars), axis=-1))

    def log_density_at_zero(self):
        # |mu| is rotation invariant, so orbits need no expansion here
        with np.errstate(divide="ignore"):
            return logsumexp(self.log_weights + log_cn(0.0, self.means, self.vars), axis=-1)


def slot_message_to_g(r_hat, v_r, constellation: Constellation, exact_jacobian=False) -> GMessage:
    """Message from one slot's extrinsic CN(r_hat, v_r) to the channel g.

    Component j has mean r_hat/s_j and variance v_r/|s_j|^2. With the
    default weighting each component keeps the symbol probability
    1/|S|; ``exact_jacobian=True`` instead uses the weights of the
    change-of-variables integral, proportional to 1/(|S| |s_j|^2).
    """
    s = constellation.points
    r = np.asarray(r_hat, complex)[..., None]
    v = np.asarray(v_r, float)[..., None]
    means = r / s
    with np.errstate(invalid="ignore"):
        vars = v / abs2(s)
    lw = np.full(np.broadcast_shapes(means.shape, vars.shape), -np.log(s.size))
    if exact_jacobian:
        lw = lw - np.log(abs2(s))
        lw = lw - logsumexp(lw, axis=-1)[..., None]
    means = np.broadcast_to(means, lw.shape).copy()
    vars = np.broadcast_to(vars, lw.shape).copy()
    return GMessage(lw, means, vars, 1, 2 * np.pi)


def compress(msg: GMessage, constellation: Constellation) -> GMessage:
    """Orbit-compressed view of a rotation-invariant slot message.

    Keeps the components generated by the first phase subset; each one
    represents |Omega| rotated copies of equal weight.
    """
    if msg.omega_order != 1:
        return msg
    m = constellation.omega_order
    if m == 1:
        return msg
    idx = constellation.subsets[0]
    # every orbit has the same weight as its member from subset 0
    lw = msg.log_weights[..., idx] + np.log(m)
    # mean r/s for s in the base subset; rotating s by +phi rotates the mean by -phi
    return GMessage(lw, msg.means[..., idx], msg.vars[..., idx], m, constellation.theta0)


def multiply(a: GMessage, b: GMessage) -> GMessage:
    """Unnormalized product of two mixtures (``b`` explicit).

    If ``a`` is orbit-compressed, ``b`` must be rotation invariant.
    """
    if b.omega_order != 1:
        b = b.expanded()
    mu1 = a.means[..., :, None]
    t1 = a.vars[..., :, None]
    mu2 = b.means[..., None, :]
    t2 = b.vars[..., None, :]
    s = t1 + t2
    lw = a.log_weights[..., :, None] + b.log_weights[..., None, :] + log_cn(mu1, mu2, s)
    mean = (mu1 * t2 + mu2 * t1) / s
    var = t1 * t2 / s
    sh = lw.shape[:-2] + (lw.shape[-2] * lw.shape[-1],)
    return GMessage(lw.reshape(sh), mean.reshape(sh), var.reshape(sh), a.omega_order, a.theta0)


def normalize(msg: GMessage):
    """Normalize weights; returns (message, log normalizer)."""
    lz = logsumexp(msg.log_weights, axis=-1)
    return GMessage(msg.log_weights - lz[..., None], msg.means, msg.vars, msg.omega_order, msg.theta0), lz


def prune(msg: GMessage, rel=PRUNE_REL) -> GMessage:
    """Drop components whose normalized weight is below ``rel``.

    Rows are compacted to the largest surviving count; shorter rows are
    padded with -inf weights.
    """
    msg, _ = normalize(msg)
    log_rel = np.log(rel) if rel > 0 else -np.inf
    keep = msg.log_weights >= log_rel
    n = int(np.max(np.sum(keep, axis=-1))) if keep.size else 0
    n = max(n, 1)
    if n == msg.n_components:
        return msg
    order = np.argsort(-msg.log_weights, axis=-1, kind="stable")[..., :n]
    lw = np.take_along_axis(msg.log_weights, order, axis=-1)
    lw = np.where(lw >= log_rel, lw, -np.inf)
    means = np.take_along_axis(msg.means, order, axis=-1)
    vars = np.take_along_axis(msg.vars, order, axis=-1)
    msg = GMessage(lw, means, vars, msg.omega_order, msg.theta0)
    return normalize(msg)[0]


def _uninformative(batch_shape):
    return GMessage(np.zeros(batch_shape + (1,)), np.zeros(batch_shape + (1,), complex),
                    np.full(batch_shape + (1,), np.inf))


def enumerate_leave_one_out(slot_messages, t, constellation: Constellation | None = None,
                            cap=ENUM_CAP, compressed=False, rel=PRUNE_REL) -> GMessage:
    """Exact product of every slot message except slot ``t``.

    Parameters
    ----------
    slot_messages : list of GMessage, or one GMessage whose last batch axis is the slot
    t : int
        Excluded slot.
    constellation : Constellation
        Needed when ``compressed`` is set.
    cap : int
        Maximum number of explicit product components.
    compressed : bool
        Keep the result orbit-compressed (|Omega| times fewer components).
        Only valid for rotation-invariant slot messages.
    """
    msgs = _as_list(slot_messages)
    others = [m for i, m in enumerate(msgs) if i != t]
    batch = msgs[0].batch_shape
    others = [m for m in others if not m.uninformative]
    if not others:
        return _uninformative(batch)
    count = 1
    for m in others:
        count *= m.n_components
    if count > cap:
        raise EnumerationInfeasible(
            f"{count} product components exceed the cap of {cap}; use the RIGM combiner instead"
        )
    if compressed:
        if constellation is None:
            raise ValueError("compressed enumeration needs the constellation")
        acc = compress(others[0], constellation)
    else:
        acc = others[0]
    for m in others[1:]:
        acc = multiply(acc, m)
    return prune(acc, rel)


def _as_list(slot_messages):
    if isinstance(slot_messages, GMessage):
        T = slot_messages.batch_shape[-1]
        return [GMessage(slot_messages.log_weights[..., i, :], slot_messages.means[..., i, :],
                         slot_messages.vars[..., i, :], slot_messages.omega_order, slot_messages.theta0)
                for i in range(T)]
    return list(slot_messages)


def combine_all(slot_messages, constellation=None, cap=ENUM_CAP, compressed=False, rel=PRUNE_REL) -> GMessage:
    """Exact product of all slot messages (used for the final channel estimate)."""
    msgs = [m for m in _as_list(slot_messages) if not m.uninformative]
    if not msgs:
        return _uninformative(_as_list(slot_messages)[0].batch_shape)
    return enumerate_leave_one_out(msgs + [_uninformative(msgs[0].batch_shape)], len(msgs),
                                   constellation, cap, compressed, rel)


def g_posterior(msg: GMessage, g_prior: SpikeGM) -> tuple[np.ndarray, GMessage]:
    """Multiply a channel message by the spike-Gaussian channel prior.

    Returns ``(log_spike, slab)`` normalized jointly; ``slab`` keeps the
    orbit compression of ``msg``. Prior components must be centred at 0
    when ``msg`` is compressed.
    """
    inf = np.isinf(msg.vars)
    mu1 = msg.means[..., :, None]
    t1 = msg.vars[..., :, None]
    mu2 = g_prior.means[..., None, :]
    t2 = g_prior.vars[..., None, :]
    s = t1 + t2
    with np.errstate(invalid="ignore", divide="ignore"):
        lc = log_cn(mu1, mu2, s)
        mean = (mu1 * t2 + mu2 * t1) / s
        var = t1 * t2 / s
    # flat components contribute a common constant that cancels
    inf2 = np.broadcast_to(inf[..., :, None], lc.shape)
    lc = np.where(inf2, 0.0, lc)
    mean = np.where(inf2, np.broadcast_to(mu2, lc.shape), mean)
    var = np.where(inf2, np.broadcast_to(t2, lc.shape), var)
    lw = msg.log_weights[..., :, None] + g_prior.log_weights[..., None, :] + lc
    sh = lw.shape[:-2] + (lw.shape[-2] * lw.shape[-1],)
    lw, mean, var = lw.reshape(sh), mean.reshape(sh), var.reshape(sh)
    with np.errstate(divide="ignore"):
        l0 = np.where(np.all(inf, axis=-1), 0.0, msg.log_density_at_zero())
    ls = g_prior.log_spike + l0
    lz = np.logaddexp(ls, logsumexp(lw, axis=-1))
    slab = GMessage(lw - lz[..., None], mean, var, msg.omega_order, msg.theta0)
    return ls - lz, slab


def emit_y_message(msg: GMessage, g_prior: SpikeGM, constellation: Constellation,
                   symbols=None, rel=PRUNE_REL) -> SpikeGM:
    """Message to y = g x: channel message times prior, pushed through x.

    ``symbols`` restricts x to a subset of points (e.g. a known pilot);
    by default x is uniform over the constellation.
    """
    log_spike, slab = g_posterior(msg, g_prior)
    s = constellation.points if symbols is None else np.atleast_1d(np.asarray(symbols, complex))
    lp = -np.log(s.size)
    sh = slab.log_weights.shape + (s.size,)
    lw = np.broadcast_to(slab.log_weights[..., :, None] + lp, sh).reshape(slab.batch_shape + (-1,))
    means = (slab.means[..., :, None] * s).reshape(lw.shape)
    vars = (slab.vars[..., :, None] * abs2(s)).reshape(lw.shape)
    out = SpikeGM(log_spike, lw, means, vars).normalized()
    return prune_spike_gm(out, rel)


def prune_spike_gm(p: SpikeGM, rel=PRUNE_REL) -> SpikeGM:
    """Drop components below ``rel`` and sort the rest by descending weight."""
    log_rel = np.log(rel) if rel > 0 else -np.inf
    keep = p.log_weights >= log_rel
    n = max(int(np.max(np.sum(keep, axis=-1))) if keep.size else 0, 1)
    order = np.argsort(-p.log_weights, axis=-1, kind="stable")[..., :n]
    lw = np.take_along_axis(p.log_weights, order, axis=-1)
    lw = np.where(lw >= log_rel, lw, -np.inf)
    means = np.where(np.isfinite(lw), np.take_along_axis(p.means, order, axis=-1), 0.0)
    vars = np.where(np.isfinite(lw), np.take_along_axis(p.vars, order, axis=-1), 1.0)
    return SpikeGM(p.log_spike, lw, means, vars, sorted_desc=True).normalized()


def phase_resolved_mean(log_spike, slab: GMessage, reference):
    """Posterior mean of g with each orbit rotated towards ``reference``.

    A rotation-invariant posterior has mean zero; aligning every orbit with
    a pilot-based estimate picks the branch the reference symbols support.
    """
    w = np.exp(slab.log_weights)
    mu = slab.means
    m = slab.omega_order
    if m > 1:
        rot = np.exp(1j * slab.theta0 * np.arange(m))
        cand = mu[..., None] * rot
        ref = np.asarray(reference, complex)[..., None, None]
        best = np.argmax((cand * np.conj(ref)).real, axis=-1)
        mu = np.take_along_axis(cand, best[..., None], axis=-1)[..., 0]
    mu = np.where(w > 0, mu, 0.0)
    return (w * mu).sum(axis=-1)


def grid_posterior_oracle(density, extent, n_points, spike_mass=0.0, normalized=True):
    """Riemann-sum moments of a density over the square [-extent, extent]^2.

    ``density`` maps a complex array to nonnegative values. A point mass
    at zero of size ``spike_mass`` is added analytically. With
    ``normalized=True`` the total mass must come out as 1 within 1e-4;
    otherwise coverage is judged by the density on the grid boundary.
    Returns ``(mass, mean, var)`` with mean/var of the normalized law.
    """
    x = np.linspace(-extent, extent, n_points)
    h = x[1] - x[0]
    G = x[None, :] + 1j * x[:, None]
    f = np.asarray(density(G), float)
    cont = f.sum() * h * h
    mass = cont + spike_mass
    if normalized:
        if abs(mass - 1.0) > 1e-4:
            raise OracleCoverageError(f"grid mass {mass:.6g} deviates from 1")
    else:
        edge = max(f[0].max(), f[-1].max(), f[:, 0].max(), f[:, -1].max())
        if edge > 1e-12 * f.max():
            raise OracleCoverageError("density not negligible on the grid boundary")
    m1 = (f * G).sum() * h * h / mass
    m2 = (f * abs2(G)).sum() * h * h / mass
    return mass, m1, max(m2 - abs2(m1), 0.0)
