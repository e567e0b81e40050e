"""Compiled inner loop for the spike-mixture denoiser.

Same arithmetic as the numpy reference in ``kernels``; batch entries are
flattened so one pass over memory serves every (user, slot) pair.

When the caller guarantees components sorted by descending weight, the
scan over components stops once every remaining term is bounded by
exp(-SKIP_LOG) relative to the largest one seen, which changes results
only at the level of double rounding.
"""

import numpy as np
from numba import njit


SKIP_LOG = 40.0


@njit(cache=True)
def spike_gm_posterior_flat(log_spike, log_w, means, vars, r, v, out_mean, out_var, sorted_desc):
    n, J = log_w.shape
    bad = -1
    lc = np.empty(J)
    for i in range(n):
        vi = v[i]
        ri = r[i]
        lvi = np.log(vi)
        m = log_spike[i] - lvi - (ri.real * ri.real + ri.imag * ri.imag) / vi
        ls = m
        Ji = J
        for j in range(J):
            # log_w - log(vi) bounds every later term when weights are sorted
            if sorted_desc and log_w[i, j] - lvi < m - SKIP_LOG:
                Ji = j
                break
            tot = vars[i, j] + vi
            d = ri - means[i, j]
            lc[j] = log_w[i, j] - np.log(tot) - (d.real * d.real + d.imag * d.imag) / tot
            if lc[j] > m:
                m = lc[j]
        if not np.isfinite(m):
            bad = i
            out_mean[i] = 0.0
            out_var[i] = 0.0
            continue
        z = np.exp(ls - m)
        acc = 0.0 + 0.0j
        sec = 0.0
        for j in range(Ji):
            p = np.exp(lc[j] - m)
            z += p
            tot = vars[i, j] + vi
            pm = (vars[i, j] * ri + vi * means[i, j]) / tot
            pv = vars[i, j] * vi / tot
            acc += p * pm
            sec += p * (pv + pm.real * pm.real + pm.imag * pm.imag)
        mean = acc / z
        var = sec / z - (mean.real * mean.real + mean.imag * mean.imag)
        out_mean[i] = mean
        out_var[i] = var if var > 0.0 else 0.0
    return bad
