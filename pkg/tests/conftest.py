import numpy as np
import pytest

from corap.tensor import FactorTriple, cpd_reconstruct


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_cp(rng, dims, rank):
    f = FactorTriple(*(rng.standard_normal((d, rank)) for d in dims))
    return cpd_reconstruct(f), f


def rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)
