import functools
import os
import sys

import numpy as np
import pytest

# MNIST IDX files are not bundled; point QGARS_MNIST_DIR at a directory
# containing train-images-idx3-ubyte / train-labels-idx1-ubyte to enable
# the MNIST-dependent checks.
MNIST_DIR = os.environ.get("QGARS_MNIST_DIR", os.path.join(os.path.dirname(__file__), "..", "data", "mnist"))


def mnist_paths():
    images = os.path.join(MNIST_DIR, "train-images-idx3-ubyte")
    labels = os.path.join(MNIST_DIR, "train-labels-idx1-ubyte")
    if os.path.exists(images) and os.path.exists(labels):
        return images, labels
    return None


requires_mnist = pytest.mark.skipif(
    mnist_paths() is None,
    reason="MNIST IDX files not available (set QGARS_MNIST_DIR); "
    "data cannot be downloaded in this environment",
)


def dense_hamiltonian(config, local_detunings):
    """Independent dense matrix of the chain Hamiltonian, built by explicit
    Kronecker products (atom 0 is the least significant bit)."""
    n = config.n_atoms
    x = np.array([[0.0, 1.0], [1.0, 0.0]])
    occ = np.diag([0.0, 1.0])
    eye = np.eye(2)

    def on_site(j, op):
        ops = [eye] * n
        ops[j] = op
        return functools.reduce(np.kron, ops[::-1])

    h = np.zeros((2**n, 2**n))
    mod = config.modulation
    for j in range(n):
        h += 0.5 * config.rabi_frequency * on_site(j, x)
        h -= (config.global_detuning + mod[j] * local_detunings[j]) * on_site(j, occ)
    for j in range(n):
        for k in range(j + 1, n):
            v = config.c6_coefficient / ((k - j) * config.lattice_spacing) ** 6
            h += v * (on_site(j, occ) @ on_site(k, occ))
    return h


def random_state(rng, dim):
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return psi / np.linalg.norm(psi)
