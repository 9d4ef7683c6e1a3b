"""
Physics-informed NN-mean GP on Burgers with Dirichlet boundaries
================================================================

The data-driven model fits a branch-trunk mean to the likelihood alone. The
physics-informed model adds the PDE residual at collocation points, the
boundary and initial-condition mismatch, with adaptive weights, evaluated for
extra input functions that have no solution data.

This is a reduced setup, about 2.5 minutes on one core. The gap needs the full
1000 epochs: at 300 epochs the two runs tie. The acceptance suite runs the
full-size comparison.
"""

import time

from operon.data import gen_burgers
from operon.means import MeanArchitecture
from operon.metrics import relative_l2
from operon.model import predict
from operon.physics import PdeProblem, PhysicsConfig, train_physics_informed
from operon.training import TrainConfig, train

t0 = time.perf_counter()
ds = gen_burgers("dirichlet", 200, 100, (12, 12), seed=1, length_scale=0.2)
train_ds, test_ds = ds.split(150, seed=0)
unlabelled = gen_burgers("dirichlet", 30, 100, (12, 12), seed=2, length_scale=0.2)
print(f"data generated in {time.perf_counter() - t0:.1f}s; q = {ds.q} space-time points")

arch = MeanArchitecture.branch_trunk(ds.p, ds.d, (64, 64), (64, 64), 32)
epochs = 1000

data_only, _ = train(train_ds, TrainConfig(mode="nn-mean", epochs=epochs), mean_arch=arch)
err_data = relative_l2(predict(data_only, test_ds.U), test_ds.targets())[0]
print(f"data-only       relative L2 {err_data:.4f}")

problem = PdeProblem(unlabelled.U, unlabelled.input_grid[:, 0], n_pde=2500)
pi_model, log = train_physics_informed(train_ds, problem, arch, PhysicsConfig(epochs=epochs))
err_pi = relative_l2(predict(pi_model, test_ds.U), test_ds.targets())[0]
print(f"physics-informed relative L2 {err_pi:.4f}  (ratio {err_pi / err_data:.2f})")
last = log[-1]
print("final terms:", {k: f"{last[k]:.3g}" for k in ("L_MLE", "L_PDE", "L_BC", "L_IC")})
