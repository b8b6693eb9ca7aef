import numpy as np
import pytest

from guidedgraph import (
    DiscreteMatrix,
    GaussianAffine,
    Seed,
    build_graph,
)


def random_spd(rng, d, scale=1.0):
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T + d * np.eye(d))


def gaussian_line_graph(rng, steps=5, dim=1, leaf_times=None):
    """Latent affine-Gaussian chain with one noisy leaf per chosen time."""
    leaf_times = set(leaf_times or [steps])
    vertices = [(0, "root")]
    edges = []
    kernels = {}
    observations = {}
    next_id = 1
    prev = 0
    latent_ids = []
    for step in range(1, steps + 1):
        t = next_id
        next_id += 1
        vertices.append((t, "latent"))
        edges.append((prev, t))
        kernels[t] = GaussianAffine(
            rng.normal(scale=0.6, size=(dim, dim)) + np.eye(dim) * 0.5,
            rng.normal(scale=0.5, size=dim),
            random_spd(rng, dim, 0.4),
        )
        latent_ids.append(t)
        if step in leaf_times:
            v = next_id
            next_id += 1
            vertices.append((v, "leaf"))
            edges.append((t, v))
            kernels[v] = GaussianAffine(
                np.eye(dim), rng.normal(scale=0.2, size=dim), random_spd(rng, dim, 0.3)
            )
            observations[v] = rng.normal(size=dim)
        prev = t
    g = build_graph(vertices, edges, kernels, observations, rng.normal(size=dim))
    return g, latent_ids


def discrete_chain_graph(rng, steps=6, size=3, obs_state=0, kernel_maker=None):
    """Finite-state chain with one exactly observed leaf at the end."""
    vertices = [(0, "root")]
    edges = []
    kernels = {}
    prev = 0
    for step in range(1, steps + 1):
        vertices.append((step, "latent"))
        edges.append((prev, step))
        if kernel_maker is None:
            K = rng.dirichlet(np.ones(size) * 2.0, size=size)
        else:
            K = kernel_maker(step)
        kernels[step] = DiscreteMatrix(K)
        prev = step
    leaf = steps + 1
    vertices.append((leaf, "leaf"))
    edges.append((prev, leaf))
    from guidedgraph import Dirac, Finite

    kernels[leaf] = Dirac(Finite(size))
    observations = {leaf: obs_state}
    g = build_graph(vertices, edges, kernels, observations, 0)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)


@pytest.fixture
def seed():
    return Seed.from_int(20260809)
