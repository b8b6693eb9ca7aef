"""Splittable random seeds and innovation handling.

Forward sampling must be a pure function of (graph, messages, seed), and
weighted samples must be able to split into two streams that behave like
independent uniforms.  Both needs are met by a counter-based splittable
seed: ``Seed`` wraps :class:`numpy.random.SeedSequence`, whose ``spawn``
gives statistically independent child streams.  This stands in for the
textbook bit-interleaving construction of two independent uniforms from
one; the counter scheme is the practical realisation of the same idea.

Innovations are the per-edge random inputs of the guided sampler.  Storing
them explicitly as one flat vector of standard normals (uniform inputs are
mapped through the normal CDF) turns the whole forward pass into a
deterministic map of that vector, which is what preconditioned
Crank-Nicolson updates require.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr


@dataclass(frozen=True)
class Seed:
    """Immutable splittable seed.

    Splitting is a pure function: the same Seed always yields the same
    children (the spawn key is extended explicitly, sidestepping the
    statefulness of SeedSequence.spawn).  Callers must route distinct
    children to distinct consumers.
    """

    seq: np.random.SeedSequence

    @staticmethod
    def from_int(entropy: int) -> "Seed":
        return Seed(np.random.SeedSequence(entropy))

    def child(self, i: int) -> "Seed":
        return Seed(
            np.random.SeedSequence(
                entropy=self.seq.entropy, spawn_key=self.seq.spawn_key + (i,)
            )
        )

    def split(self) -> tuple:
        return self.child(0), self.child(1)

    def spawn(self, k: int) -> list:
        return [self.child(i) for i in range(k)]

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.seq)


def normals_to_uniforms(z: np.ndarray) -> np.ndarray:
    """Map standard normals to (0, 1) uniforms through the normal CDF."""
    u = ndtr(z)
    return np.clip(u, 1e-15, 1.0 - 1e-15)


class InnovationSource:
    """Sequential reader over a flat vector of standard-normal innovations."""

    def __init__(self, z: np.ndarray):
        self.z = np.asarray(z, dtype=float)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        if self.pos + k > self.z.shape[0]:
            raise IndexError("innovation vector exhausted")
        out = self.z[self.pos : self.pos + k]
        self.pos += k
        return out


class FreshInnovations:
    """Innovation source that draws fresh normals from a generator."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def take(self, k: int) -> np.ndarray:
        return self.rng.standard_normal(k)
