"""Outer SMD <-> CSCE loop, final decisions and frame metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import csce_exact as cx
from . import csce_rigm as cr
from .constellation import Constellation
from .kernels import GaussMsg, SpikeGM, abs2, spike_gm_posterior
from .scenario import FrameTruth, SystemConfig, prior_messages
from .smd import gamp_slot

VARIANTS = ("exact", "rigm", "ga")


@dataclass(frozen=True)
class ReceiverConfig:
    """Iteration and decision settings.

    ``g_th_scale`` is c in g_th = c * sqrt(beta N0 / (N0 + beta)); a
    non-None ``g_th`` overrides it with one absolute threshold.
    ``outer_tol`` stops the outer loop early once the average posterior
    variance changes by less than this fraction (0 disables).
    """

    Q: int = 20
    Q_outer: int = 10
    damping: float = 0.8
    smd_tol: float = 1e-6
    outer_tol: float = 1e-4
    g_th_scale: float = 0.2
    g_th: float | None = None
    enum_cap: int = cx.ENUM_CAP
    compressed: bool = True
    exact_jacobian: bool = False
    warm_start: bool = False

    def __post_init__(self):
        if self.Q < 1 or self.Q_outer < 1:
            raise ValueError("Q and Q_outer must be >= 1")
        if not (0 < self.damping <= 1):
            raise ValueError("damping must lie in (0, 1]")
        if self.g_th_scale < 0 or (self.g_th is not None and self.g_th < 0):
            raise ValueError("thresholds must be nonnegative")

    def as_dict(self):
        return asdict(self)


@dataclass
class ReceiverOutput:
    u_hat: np.ndarray
    g_hat: np.ndarray
    h_hat: np.ndarray
    x_idx: np.ndarray
    soft_y: GaussMsg
    trace: list
    g_threshold: np.ndarray
    constellation: Constellation
    variant: str = "rigm"
    outer_iterations: int = 0
    smd_iterations: list = field(default_factory=list)

    @property
    def x_hat(self):
        """Hard symbol decisions over data slots; NaN where erased."""
        pts = np.append(self.constellation.points, np.nan)
        return pts[self.x_idx]


@dataclass
class Metrics:
    aer: float
    ser: float
    mse_g: float
    symbol_errors: int
    symbols: int

    @property
    def mse_db(self):
        return 10 * np.log10(self.mse_g) if self.mse_g > 0 else -np.inf


def activity_threshold(beta, N0, rc: ReceiverConfig):
    beta = np.asarray(beta, float)
    if rc.g_th is not None:
        return np.full(beta.shape, float(rc.g_th))
    return rc.g_th_scale * np.sqrt(beta * N0 / (N0 + beta))


# CSCE variants: (r_hat, v_r) of shape (K, T) -> SpikeGM priors (K, T, .)


def _csce_rigm(r, v, config, beta, rc):
    msg = cr.rigm_leave_one_out(r, v, config.constellation)
    return cr.rigm_emit_y(msg, config.lam, beta[:, None], config.constellation)


def _csce_ga(r, v, config, beta, rc):
    const = config.constellation
    msgs = cr.ga_slot_messages(r, v, const, config.n_rs)
    loo = cr.gauss_leave_one_out(msgs)
    p = cr.rigm_emit_y(cr.RigmMsg(loo.mean, loo.var, 1, 2 * np.pi), config.lam, beta[:, None], const)
    # pilot slots emit through the known symbol only
    lw = p.log_weights.copy()
    ref = const.reference_index
    keep = lw[:, : config.n_rs, ref].copy()
    lw[:, : config.n_rs, :] = -np.inf
    lw[:, : config.n_rs, ref] = keep + np.log(const.size)
    return SpikeGM(p.log_spike, lw, p.means, p.vars)


def _stack_padded(parts):
    n = max(p.n_components for p in parts)
    out = []
    for p in parts:
        pad = n - p.n_components
        if pad:
            sh = p.log_weights.shape[:-1] + (pad,)
            p = SpikeGM(p.log_spike,
                        np.concatenate([p.log_weights, np.full(sh, -np.inf)], axis=-1),
                        np.concatenate([p.means, np.zeros(sh, complex)], axis=-1),
                        np.concatenate([p.vars, np.ones(sh)], axis=-1), p.sorted_desc)
        out.append(p)
    return SpikeGM(np.stack([p.log_spike for p in out], axis=1),
                   np.stack([p.log_weights for p in out], axis=1),
                   np.stack([p.means for p in out], axis=1),
                   np.stack([p.vars for p in out], axis=1),
                   all(p.sorted_desc for p in out))


def _exact_slot_messages(r, v, config, rc):
    const = config.constellation
    return cx.slot_message_to_g(r, v, const, exact_jacobian=rc.exact_jacobian)


def _csce_exact(r, v, config, beta, rc, gp):
    const = config.constellation
    slots = cx._as_list(_exact_slot_messages(r, v, config, rc))
    parts = []
    for t in range(config.T):
        # rotations keep |s_j|, so the Jacobian weighting stays rotation invariant
        m = cx.enumerate_leave_one_out(slots, t, const, rc.enum_cap, compressed=rc.compressed)
        parts.append(cx.emit_y_message(m, gp, const))
    return _stack_padded(parts)


def _align(mean, theta0, order, ref):
    """Rotate ``mean`` by the multiple of theta0 that best matches ``ref``."""
    if order == 1:
        return mean
    cand = mean[..., None] * np.exp(1j * theta0 * np.arange(order))
    best = np.argmax((cand * np.conj(ref)[..., None]).real, axis=-1)
    return np.take_along_axis(cand, best[..., None], axis=-1)[..., 0]


def _channel_estimate(variant, r, v, config, beta, rc, gp, h_ref):
    const = config.constellation
    if variant == "rigm":
        msg = cr.rigm_combine(r, v, const)
        _, log_slab, mean, _ = cr.rigm_g_posterior(msg, config.lam, beta)
        return np.exp(log_slab) * _align(mean, const.theta0, const.omega_order, h_ref)
    if variant == "ga":
        g = cr.gauss_combine(cr.ga_slot_messages(r, v, const, config.n_rs))
        _, log_slab, mean, _ = cr.rigm_g_posterior(cr.RigmMsg(g.mean, g.var, 1, 2 * np.pi),
                                                   config.lam, beta)
        return np.exp(log_slab) * mean
    slots = _exact_slot_messages(r, v, config, rc)
    msg = cx.combine_all(slots, const, rc.enum_cap, compressed=rc.compressed)
    log_spike, slab = cx.g_posterior(msg, gp)
    return cx.phase_resolved_mean(log_spike, slab, h_ref)


def pilot_channel(y_hat, constellation: Constellation, n_rs):
    """Average of y_hat / s_p over the reference slots."""
    return np.mean(y_hat[..., :n_rs], axis=-1) / constellation.reference_symbol


def run_receiver(A, R, config: SystemConfig, variant="rigm", rc: ReceiverConfig | None = None,
                 beta=None) -> ReceiverOutput:
    """Joint activity detection, channel estimation and data detection.

    Parameters
    ----------
    A : (L, K) spreading matrix
    R : (L, T) observation
    config : SystemConfig
    variant : {"exact", "rigm", "ga"}
        Channel-combining rule inside CSCE.
    rc : ReceiverConfig, optional
    beta : (K,) large-scale gains, defaults to ``config.beta_array()``
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    rc = rc or ReceiverConfig()
    beta = config.beta_array() if beta is None else np.asarray(beta, float)
    K, T = config.K, config.T
    if A.shape != (config.L, K) or R.shape != (config.L, T):
        raise ValueError("A/R shapes do not match the config")
    if variant == "exact":
        J = config.constellation.size
        if J ** (T - 1) > rc.enum_cap:
            raise cx.EnumerationInfeasible(
                f"|S|^(T-1) = {J ** (T - 1)} exceeds the cap {rc.enum_cap}; use variant='rigm'")
    gp, yp = prior_messages(config, beta)
    prior = SpikeGM(yp.log_spike[:, None], yp.log_weights[:, None, :],
                    yp.means[:, None, :], yp.vars[:, None, :]).broadcast_to((K, T))
    N0 = config.N0
    trace, iters = [], []
    state = None
    res = None
    for qo in range(rc.Q_outer):
        res = gamp_slot(A, R, prior, N0, rc.Q, rc.damping, rc.smd_tol,
                        state=state if rc.warm_start else None)
        state = res.state
        iters.append(res.iterations)
        trace.append(float(np.mean(res.posterior.var)))
        prior = csce_priors(variant, res.extrinsic.mean, res.extrinsic.var, config, beta, rc, gp)
        if rc.outer_tol > 0 and len(trace) > 1:
            if abs(trace[-1] - trace[-2]) <= rc.outer_tol * max(trace[-2], 1e-300):
                break
    soft_y, g_hat, g_th, u_hat, h_hat, x_idx = decide(
        variant, res.extrinsic.mean, res.extrinsic.var, prior, config, beta, rc, gp)
    return ReceiverOutput(u_hat, g_hat, h_hat, x_idx, soft_y, trace, g_th, config.constellation,
                          variant, len(trace), iters)


def csce_priors(variant, r, v, config, beta, rc, gp=None) -> SpikeGM:
    """Refreshed per-(user, slot) priors on y from the slot extrinsics."""
    if variant == "rigm":
        return _csce_rigm(r, v, config, beta, rc)
    if variant == "ga":
        return _csce_ga(r, v, config, beta, rc)
    if gp is None:
        gp = prior_messages(config, beta)[0]
    return _csce_exact(r, v, config, beta, rc, gp)


def decide(variant, r, v, prior, config, beta, rc, gp=None):
    """Final soft estimates and decisions from the last extrinsics and priors.

    Returns ``(soft_y, g_hat, g_th, u_hat, h_hat, x_idx)``.
    """
    if gp is None:
        gp = prior_messages(config, beta)[0]
    soft_y = spike_gm_posterior(prior, r, v)
    h_ref = pilot_channel(soft_y.mean, config.constellation, config.n_rs)
    g_hat = _channel_estimate(variant, r, v, config, beta, rc, gp, h_ref)
    g_th = activity_threshold(beta, config.N0, rc)
    u_hat, h_hat, x_idx = finalize(soft_y, g_hat, config, g_th)
    return soft_y, g_hat, g_th, u_hat, h_hat, x_idx


def finalize(soft_y: GaussMsg, g_hat, config: SystemConfig, g_th):
    """Threshold activity on |g_hat|, estimate channels from the pilots and
    slice the data slots.

    Returns ``(u_hat, h_hat, x_idx)``; ``x_idx`` holds constellation indices
    over the data slots, -1 where the user is inactive or its channel
    estimate is exactly zero.
    """
    const = config.constellation
    y = np.asarray(soft_y.mean)
    u_hat = (np.abs(g_hat) >= g_th).astype(int)
    h = pilot_channel(y, const, config.n_rs)
    h_hat = np.where(u_hat == 1, h, 0.0)
    x_idx = np.full((y.shape[0], config.n_data), -1, dtype=int)
    ok = (u_hat == 1) & (h_hat != 0)
    if np.any(ok):
        x_idx[ok] = const.nearest(y[ok, config.n_rs:] / h_hat[ok, None])
    return u_hat, h_hat, x_idx


def compute_metrics(output: ReceiverOutput, truth: FrameTruth, n_rs) -> Metrics:
    """Frame activity error, symbol error rate and channel MSE.

    A user judged inactive correctly has all data symbols right, a wrong
    activity decision makes all of them wrong, and an active user's symbol
    counts only when the activity and the symbol are both right.
    """
    u = truth.u
    u_hat = output.u_hat
    const = output.constellation
    K = u.size
    n_data = truth.X.shape[1] - n_rs
    correct = np.zeros((K, n_data), bool)
    inactive_ok = (u == 0) & (u_hat == 0)
    correct[inactive_ok] = True
    act = (u == 1) & (u_hat == 1)
    if np.any(act):
        true_idx = const.nearest(truth.X[act, n_rs:])
        correct[act] = output.x_idx[act] == true_idx
    n = K * n_data
    errs = int(n - correct.sum())
    aer = float(np.any(u != u_hat))
    mse = float(np.mean(abs2(truth.g - output.g_hat)))
    return Metrics(aer, errs / n if n else 0.0, mse, errs, n)
