"""
Loss and error maps over the kernel parameters
==============================================

Zero-shot models over a logarithmic grid of input and output length-scale
parameters. A broad basin of good values means the initialisation is easy to
get right; very small output parameters break down from ill-conditioning.
"""

import numpy as np

from operon.cli import sweep_rows
from operon.data import gen_advection

ds = gen_advection(300, 40, seed=0)
train_ds, test_ds = ds.split(250, seed=0)
beta_phi = [10.0**k for k in range(-4, 1)]
beta_y = [10.0**k for k in range(0, 5)]
rows = sweep_rows(train_ds, test_ds, beta_phi, beta_y, [1.0])
err = np.array([r["error"] for r in rows]).reshape(len(beta_phi), len(beta_y))

print("test relative L2; rows beta_phi, columns beta_y")
print("beta_phi  " + "".join(f"{b:>10.0e}" for b in beta_y))
for bp, line in zip(beta_phi, err):
    print(f"{bp:>8.0e}  " + "".join(f"{e:>10.2e}" for e in line))
i, j = np.unravel_index(np.nanargmin(err), err.shape)
print(f"best cell beta_phi={beta_phi[i]:g}, beta_y={beta_y[j]:g}")
