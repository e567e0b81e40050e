"""Slot-wise multi-user detection with GAMP.

All slots are processed together: ``R`` is L x T and the prior carries a
(K, T) batch. Slots never interact inside a call, only through the
priors supplied by the channel-estimation stage between outer rounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import GaussMsg, NumericalDegeneracyError, SpikeGM, awgn_posterior, spike_gm_posterior


class SmdDivergence(FloatingPointError):
    pass


@dataclass
class SmdState:
    y_hat: np.ndarray
    v_y: np.ndarray
    s_hat: np.ndarray
    v_s: np.ndarray | None = None
    p_hat: np.ndarray | None = None
    v_p: np.ndarray | None = None
    r_hat: np.ndarray | None = None
    v_r: np.ndarray | None = None
    iteration: int = 0


@dataclass
class SmdResult:
    extrinsic: GaussMsg
    posterior: GaussMsg
    iterations: int
    state: SmdState
    history: list = field(default_factory=list)


def init_state(prior: SpikeGM, L, T=None) -> SmdState:
    shape = (L,) if T is None else (L, T)
    return SmdState(prior.mean(), prior.variance(), np.zeros(shape, complex))


def gamp_iteration(state: SmdState, A, A2, R, prior: SpikeGM, N0, damping=1.0) -> SmdState:
    """One pass of the output step, input step and denoiser."""
    v_p = A2 @ state.v_y
    p_hat = A @ state.y_hat - v_p * state.s_hat
    if v_p.min() > 0:
        # AWGN output step written out: z = (v_p r + N0 p)/(v_p + N0)
        denom = v_p + N0
        v_s = 1.0 / denom
        s_hat = (R - p_hat) / denom
    else:
        # v_p == 0 only when every prior is a point mass; the output step
        # then reduces to the plain AWGN residual
        z = awgn_posterior(GaussMsg(p_hat, v_p), R, N0)
        with np.errstate(divide="ignore", invalid="ignore"):
            v_s = np.maximum((1.0 - z.var / v_p) / v_p, 0.0)
            s_hat = (z.mean - p_hat) / v_p
        zero = v_p <= 0
        v_s = np.where(zero, 1.0 / N0, v_s)
        s_hat = np.where(zero, (R - p_hat) / N0, s_hat)
    with np.errstate(divide="ignore"):
        v_r = 1.0 / (A2.T @ v_s)
    r_hat = state.y_hat + v_r * (A.T @ s_hat)
    post = spike_gm_posterior(prior, r_hat, v_r)
    if damping == 1.0:
        y_hat, v_y = post.mean, post.var
    else:
        y_hat = damping * post.mean + (1 - damping) * state.y_hat
        v_y = damping * post.var + (1 - damping) * state.v_y
    return SmdState(y_hat, v_y, s_hat, v_s, p_hat, v_p, r_hat, v_r, state.iteration + 1)


def gamp_slot(A, R, prior: SpikeGM, N0, max_iter=20, damping=0.8, tol=1e-6, state=None) -> SmdResult:
    """Run GAMP on ``R = A Y + W`` under per-entry spike-mixture priors.

    Parameters
    ----------
    A : (L, K) real array
    R : (L,) or (L, T) complex array
    prior : SpikeGM with batch shape (K,) or (K, T)
    N0 : float
        Noise variance.
    max_iter : int
        Iteration cap.
    damping : float in (0, 1]
        Weight on the fresh denoiser output.
    tol : float
        Stop once the relative change of sum(v_y) falls below this.
    state : SmdState, optional
        Warm start; otherwise means/variances come from the prior.

    Returns
    -------
    SmdResult
        ``extrinsic`` holds (r_hat, v_r) from the last iteration and
        ``posterior`` the matching denoiser output.
    """
    A = np.asarray(A, dtype=float)
    R = np.asarray(R, dtype=complex)
    L, K = A.shape
    T = None if R.ndim == 1 else R.shape[1]
    batch = (K,) if T is None else (K, T)
    prior = prior.broadcast_to(batch) if prior.batch_shape != batch else prior
    A2 = A * A
    if state is None:
        state = init_state(prior, L, T)
    history = []
    prev = float(np.sum(state.v_y))
    for q in range(max_iter):
        try:
            state = gamp_iteration(state, A, A2, R, prior, N0, damping)
        except NumericalDegeneracyError as e:
            raise SmdDivergence(f"denoiser failed at iteration {q + 1}: {e}") from e
        cur = float(np.sum(state.v_y))
        # one reduction per array; any nan/inf entry poisons the sum
        if not np.isfinite(cur + state.y_hat.sum() + state.r_hat.sum() + state.v_r.sum()):
            raise SmdDivergence(f"non-finite GAMP state at iteration {q + 1}")
        history.append(cur / state.v_y.size)
        if abs(cur - prev) <= tol * max(abs(prev), 1e-300):
            break
        prev = cur
    post = GaussMsg(state.y_hat, state.v_y)
    return SmdResult(GaussMsg(state.r_hat, state.v_r), post, state.iteration, state, history)
