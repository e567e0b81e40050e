"""
Predicting the receiver without running it
==========================================

State evolution tracks two scalars: tau, the interference-plus-noise
power each user sees after the multi-user detector, and v, the quality
of the channel messages fed back from the per-user combiner. Each map
is a small Monte Carlo experiment; their fixed point predicts the
symbol error rate of the full receiver.
"""

import numpy as np

from juicesd import SystemConfig, compute_metrics, generate_frame, run_receiver
from juicesd import state_evolution as se

cfg = SystemConfig(K=200, L=50, T=7, lam=0.1, snr_db=10)

# %%
# The recursion starts from v = 1 (no channel knowledge) and only ever
# improves.

res = se.se_fixed_point(cfg, smd_samples=10000, csce_samples=3000, decision_samples=10000)
print("v sequence:  ", np.round(res.v_sequence, 4))
print("tau sequence:", np.round(res.tau_sequence, 4))

# %%
# Compare with a short simulation of the real receiver.

ser, mse = [], []
for s in range(30):
    f = generate_frame(cfg, s)
    m = compute_metrics(run_receiver(f.A, f.R, cfg), f, cfg.n_rs)
    ser.append(m.ser)
    mse.append(m.mse_g)
print(f"predicted SER {res.ser:.4f}   simulated {np.mean(ser):.4f}")
print(f"predicted MSE {res.mse_db:.2f} dB   simulated {10 * np.log10(np.mean(mse)):.2f} dB")
