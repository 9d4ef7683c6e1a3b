import numpy as np
import pytest
from hypothesis import settings

from operon.data import OperatorDataset
from operon.kernels import KernelFamily, KernelParams, SeparableKernelParams

# fixed example sequence so the suite is reproducible run to run
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.T


def random_dataset(rng, N=4, q=3, p=2, d=1, S=1):
    U = rng.standard_normal((N, p))
    Y = rng.uniform(0.0, 1.0, (q, d))
    V = rng.standard_normal((S, q, N))
    return OperatorDataset(U, Y, V, metadata={"name": "random"})


def random_kernel(rng, p, d, family=KernelFamily.GAUSSIAN, out_family=KernelFamily.GAUSSIAN):
    return SeparableKernelParams(
        KernelParams.create(family, rng.uniform(0.3, 2.0, p), rng.uniform(0.5, 2.0)),
        KernelParams.create(out_family, rng.uniform(1.0, 5.0, d), 1.0),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
