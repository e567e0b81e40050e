"""
Why one reference symbol is enough
==================================

Rotating a user's channel by -90 degrees and its QPSK symbols by +90
degrees leaves the received signal unchanged, so channel messages built
from data slots alone are rotation invariant. The RIGM message captures
that with four equally weighted Gaussians whose means are rotations of
one another. The reference symbol picks the branch.
"""

import numpy as np

from juicesd import build_constellation
from juicesd import csce_rigm as cr

qpsk = build_constellation("qpsk")
rng = np.random.default_rng(5)
h = 0.9 * np.exp(0.4j)
T = 6
x = qpsk.sample(rng, T)
x[0] = qpsk.reference_symbol
r = h * x + 0.1 * (rng.standard_normal(T) + 1j * rng.standard_normal(T))
v = np.full(T, 0.02)

# %%
# Combine the five data slots. The result has four components and the
# true channel is one of them.

msg = cr.rigm_combine(r[1:], v[1:], qpsk)
print("component means:", np.round(msg.component_means(), 3))
print("true channel:   ", np.round(h, 3))
print("shared variance:", float(msg.common_var))

# %%
# The density is the same at g and at 1j * g.

g = msg.component_means()[0] + 0.05
print("density at g, 1j*g:", float(msg.density(g)), float(msg.density(1j * g)))

# %%
# The reference slot observes h * s_p directly, so r_0 / s_p points at
# the right component.

ref = r[0] / qpsk.reference_symbol
pick = np.argmin(np.abs(msg.component_means() - ref))
print("reference estimate:", np.round(ref, 3), "-> component", pick,
      np.round(msg.component_means()[pick], 3))
