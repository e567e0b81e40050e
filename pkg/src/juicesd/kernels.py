"""Scalar Bayesian denoisers and Gaussian-mixture helpers.

Everything here broadcasts over leading batch dimensions; mixture
components always live on the last axis. Densities are circularly
symmetric complex Gaussians, CN(x; m, v) = exp(-|x - m|^2 / v) / (pi v).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

try:
    from . import _fast
except ImportError:  # numba missing: numpy path only
    _fast = None

VAR_FLOOR = 1e-12


class NumericalDegeneracyError(FloatingPointError):
    """Raised when every mixture responsibility underflows at once."""


def abs2(z):
    z = np.asarray(z)
    if np.iscomplexobj(z):
        return z.real ** 2 + z.imag ** 2
    return z * z


def log_cn(x, mean, var):
    """Log density of CN(mean, var) at ``x``."""
    return -np.log(np.pi * var) - abs2(x - mean) / var


@dataclass
class GaussMsg:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=complex)
        self.var = np.asarray(self.var, dtype=float)

    @property
    def shape(self):
        return np.broadcast_shapes(self.mean.shape, self.var.shape)

    def __getitem__(self, idx):
        m = np.broadcast_to(self.mean, self.shape)
        v = np.broadcast_to(self.var, self.shape)
        return GaussMsg(m[idx], v[idx])


@dataclass
class SpikeGM:
    """Point mass at zero plus a Gaussian mixture, stored in log domain.

    ``log_spike`` has the batch shape; ``log_weights``, ``means`` and
    ``vars`` carry one extra trailing axis for the components. Padding
    components use ``log_weights = -inf``. ``sorted_desc`` records that
    components are ordered by descending weight in every row.
    """

    log_spike: np.ndarray
    log_weights: np.ndarray
    means: np.ndarray
    vars: np.ndarray
    sorted_desc: bool = False

    def __post_init__(self):
        self.log_spike = np.asarray(self.log_spike, dtype=float)
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        self.means = np.asarray(self.means, dtype=complex)
        self.vars = np.asarray(self.vars, dtype=float)

    @classmethod
    def from_weights(cls, spike_weight, weights, means, vars):
        with np.errstate(divide="ignore"):
            return cls(np.log(spike_weight), np.log(weights), means, vars).normalized()

    @property
    def batch_shape(self):
        return np.broadcast_shapes(
            self.log_spike.shape,
            self.log_weights.shape[:-1],
            self.means.shape[:-1],
            self.vars.shape[:-1],
        )

    @property
    def n_components(self) -> int:
        return self.log_weights.shape[-1]

    @property
    def spike_weight(self):
        return np.exp(self.log_spike)

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def normalized(self) -> "SpikeGM":
        with np.errstate(divide="ignore", invalid="ignore"):
            lw = np.concatenate(
                [np.broadcast_to(self.log_spike[..., None], self.log_weights.shape[:-1] + (1,)),
                 self.log_weights],
                axis=-1,
            )
            lz = _logsumexp(lw, axis=-1)
        return SpikeGM(self.log_spike - lz, self.log_weights - lz[..., None], self.means, self.vars,
                       self.sorted_desc)

    def total_mass(self):
        return self.spike_weight + self.weights.sum(axis=-1)

    def mean(self):
        return (self.weights * self.means).sum(axis=-1)

    def second_moment(self):
        return (self.weights * (self.vars + abs2(self.means))).sum(axis=-1)

    def variance(self):
        return np.maximum(self.second_moment() - abs2(self.mean()), 0.0)

    def broadcast_to(self, shape) -> "SpikeGM":
        j = self.n_components
        return SpikeGM(
            np.broadcast_to(self.log_spike, shape),
            np.broadcast_to(self.log_weights, shape + (j,)),
            np.broadcast_to(self.means, shape + (j,)),
            np.broadcast_to(self.vars, shape + (j,)),
            self.sorted_desc,
        )

    def __getitem__(self, idx) -> "SpikeGM":
        b = self.broadcast_to(self.batch_shape)
        if not isinstance(idx, tuple):
            idx = (idx,)
        cidx = idx + (Ellipsis,) if Ellipsis not in idx else idx
        return SpikeGM(b.log_spike[idx], b.log_weights[cidx], b.means[cidx], b.vars[cidx], self.sorted_desc)

    def density(self, y):
        """Continuous part of the density at ``y`` (the spike is excluded)."""
        y = np.asarray(y)[..., None]
        with np.errstate(divide="ignore"):
            return np.exp(_logsumexp(self.log_weights + log_cn(y, self.means, self.vars), axis=-1))


def _logsumexp(a, axis=-1):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


logsumexp = _logsumexp


def awgn_posterior(prior: GaussMsg, r, N0) -> GaussMsg:
    """Posterior of z ~ CN(prior) observed as r = z + CN(0, N0)."""
    vp = np.asarray(prior.var, dtype=float)
    p = np.asarray(prior.mean, dtype=complex)
    r = np.asarray(r)
    N0 = float(N0)
    inf = np.isinf(vp)
    with np.errstate(invalid="ignore"):
        denom = vp + N0
        mean = (vp * r + N0 * p) / denom
        var = vp * N0 / denom
    if np.any(inf):
        mean = np.where(inf, r, mean)
        var = np.where(inf, N0, var)
    return GaussMsg(mean, var)


def _responsibilities(prior: SpikeGM, r_hat, v_r):
    r = np.asarray(r_hat, dtype=complex)[..., None]
    v = np.asarray(v_r, dtype=float)[..., None]
    tot = prior.vars + v
    d = r - prior.means
    # the common factor 1/pi is dropped from every term
    with np.errstate(divide="ignore", invalid="ignore"):
        log_c = prior.log_weights - np.log(tot) - (d.real * d.real + d.imag * d.imag) / tot
        v0 = v[..., 0]
        log_s = prior.log_spike - np.log(v0) - (r.real[..., 0] ** 2 + r.imag[..., 0] ** 2) / v0
    m = np.maximum(log_c.max(axis=-1), log_s)
    if not np.isfinite(m).all():
        bad = np.argwhere(~np.isfinite(m))
        raise NumericalDegeneracyError(
            f"all responsibilities underflow at {len(bad)} position(s), first {bad[0].tolist()}"
        )
    pc = np.exp(log_c - m[..., None])
    ps = np.exp(log_s - m)
    z = pc.sum(axis=-1) + ps
    return pc, ps, z, r, v, tot


def spike_gm_posterior(prior: SpikeGM, r_hat, v_r) -> GaussMsg:
    """MMSE mean and variance of Y ~ prior observed as r_hat = Y + CN(0, v_r).

    Responsibilities are formed in the log domain with one max-subtraction
    per mixture, so priors whose weights span hundreds of decades are fine.
    Uses the compiled kernel when numba is importable; priors flagged
    ``sorted_desc`` let it stop at negligible trailing components.
    """
    if _fast is not None:
        return _spike_gm_posterior_compiled(prior, r_hat, v_r, prior.sorted_desc)
    return spike_gm_posterior_reference(prior, r_hat, v_r)


def _spike_gm_posterior_compiled(prior: SpikeGM, r_hat, v_r, sorted_desc=False) -> GaussMsg:
    r = np.asarray(r_hat, dtype=complex)
    v = np.asarray(v_r, dtype=float)
    shape = np.broadcast_shapes(prior.batch_shape, r.shape, v.shape)
    J = prior.n_components
    b = prior.broadcast_to(shape)

    def flat(a, dt, extra=()):
        return np.ascontiguousarray(np.broadcast_to(a, shape + extra), dtype=dt).reshape((-1,) + extra)

    mean = np.empty(int(np.prod(shape)), complex)
    var = np.empty_like(mean, dtype=float)
    bad = _fast.spike_gm_posterior_flat(
        flat(b.log_spike, float), flat(b.log_weights, float, (J,)), flat(b.means, complex, (J,)),
        flat(b.vars, float, (J,)), flat(r, complex), flat(v, float), mean, var, bool(sorted_desc))
    if bad >= 0:
        raise NumericalDegeneracyError(
            f"all responsibilities underflow, first at {list(np.unravel_index(bad, shape))}")
    return GaussMsg(mean.reshape(shape), var.reshape(shape))


def spike_gm_posterior_reference(prior: SpikeGM, r_hat, v_r) -> GaussMsg:
    """Plain-numpy version of :func:`spike_gm_posterior`."""
    pc, ps, z, r, v, tot = _responsibilities(prior, r_hat, v_r)
    pc /= z[..., None]
    post_mean = (prior.vars * r + v * prior.means) / tot
    post_var = prior.vars * v / tot
    mean = (pc * post_mean).sum(axis=-1)
    second = (pc * (post_var + post_mean.real ** 2 + post_mean.imag ** 2)).sum(axis=-1)
    var = np.maximum(second - (mean.real ** 2 + mean.imag ** 2), 0.0)
    return GaussMsg(mean, var)


def spike_probability(prior: SpikeGM, r_hat, v_r):
    """Posterior probability that Y sits on the spike."""
    pc, ps, z, *_ = _responsibilities(prior, r_hat, v_r)
    return ps / z


def gm_moment_match(weights, means, vars, axis=-1) -> GaussMsg:
    """Collapse a Gaussian mixture to one Gaussian with the same two moments.

    Weights are renormalized; the returned variance is clamped at zero.
    """
    w = np.asarray(weights, dtype=float)
    mu = np.asarray(means, dtype=complex)
    tau = np.asarray(vars, dtype=float)
    if w.size == 0 or w.shape[axis] == 0:
        raise ValueError("empty mixture")
    if np.any(w < 0):
        raise ValueError("negative mixture weight")
    tot = w.sum(axis=axis, keepdims=True)
    if np.any(tot <= 0):
        raise ValueError("mixture weights sum to zero")
    w = w / tot
    mean = (w * mu).sum(axis=axis)
    second = (w * (tau + abs2(mu))).sum(axis=axis)
    return GaussMsg(mean, np.maximum(second - abs2(mean), 0.0))


def moment_match_log(log_weights, means, vars, axis=-1) -> GaussMsg:
    """``gm_moment_match`` with log-domain weights."""
    lw = np.asarray(log_weights, dtype=float)
    m = np.max(lw, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise NumericalDegeneracyError("all mixture weights underflow")
    return gm_moment_match(np.exp(lw - m), means, vars, axis=axis)
