"""Rules for finite-state chains and interacting particle systems.

Single chains are plain matrix-vector algebra on h vectors.  Interacting
systems keep the interaction in the forward kernel but filter backwards on
n separate per-particle line graphs (diagonalised backward pass), which
bypasses the intractable fusion over the joint configuration space.

h vectors are renormalised to sum one after every pullback, with the scale
folded into a log-constant; forward sampling is invariant to that positive
rescaling, and long horizons cannot underflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, ZeroDenominator, ZeroHVector
from .hfun import DiscreteParticlesH, DiscreteVec
from .kernels import DiscreteInteracting


def pullback(K: np.ndarray, h: DiscreteVec) -> DiscreteVec:
    """Pull h back through a stochastic matrix: h'(x) = sum_y K[x, y] h(y)."""
    K = np.asarray(K, dtype=float)
    if K.shape[1] != h.size:
        raise DimMismatch(f"matrix {K.shape} cannot consume h of length {h.size}")
    v = K @ h.vec
    if v.sum() <= 0:
        raise ZeroHVector("pullback produced an all-zero h vector")
    return DiscreteVec(v, h.logc)


def leaf_init(observed: int, size: int) -> DiscreteVec:
    """Exactly observed leaf: h = e_k."""
    if not 0 <= int(observed) < size:
        raise DimMismatch(f"observation {observed} outside alphabet of size {size}")
    v = np.zeros(size)
    v[int(observed)] = 1.0
    return DiscreteVec(v)


def leaf_init_noisy(emission: np.ndarray, observed: int) -> DiscreteVec:
    """Leaf observed through an emission matrix: h(x) = emission[x, k]."""
    emission = np.asarray(emission, dtype=float)
    col = emission[:, int(observed)]
    if col.sum() <= 0:
        raise ZeroHVector("observation has zero likelihood in every state")
    return DiscreteVec(col)


def forward_draw(h_num: DiscreteVec, denom: DiscreteVec, x: int, K: np.ndarray, u: float):
    """Sample the guided transition from state x.

    The child lands on k with probability proportional to K[x, k] h(k),
    drawn by inverse CDF on the cumulative (ties resolved to the lowest
    index).  Returns (logw_increment, k) with the increment
    log<K h>_x - log<Ktilde h>_x.
    """
    K = np.asarray(K, dtype=float)
    row = K[int(x)] * h_num.vec
    s = row.sum()
    dx = denom.vec[int(x)]
    if s <= 0 or dx <= 0:
        raise ZeroDenominator(f"guided transition impossible from state {x}")
    cum = np.cumsum(row)
    k = int(np.searchsorted(cum, u * s, side="left"))
    k = min(k, h_num.size - 1)
    inc = (h_num.logc + float(np.log(s))) - (denom.logc + float(np.log(dx)))
    return inc, k


def forward_measure(K: np.ndarray, h_num: DiscreteVec, denom: DiscreteVec, mu: np.ndarray):
    """Push an (unnormalised) measure through the weighted forward map.

    nu(k) = sum_x mu(x) m(x, k) K[x, k] with message
    m(x, k) = h(k) / (Ktilde h)(x);  returns the raw vector, whose total
    mass shrinks or grows by the expected weight.
    """
    K = np.asarray(K, dtype=float)
    mu = np.asarray(mu, dtype=float)
    m = np.exp(h_num.logc - denom.logc) * (h_num.vec[None, :] / denom.vec[:, None])
    return (mu[:, None] * m * K).sum(axis=0)


def marginalise_pair(table: np.ndarray):
    """Project a two-factor h table onto product form.

    Returns (row sums, column sums) each divided by the square root of the
    total mass, so that the masses of the two factors multiply back to the
    mass of the table.
    """
    table = np.asarray(table, dtype=float)
    if table.ndim != 2:
        raise DimMismatch("expected a 2-D h table")
    c = table.sum()
    if c <= 0:
        raise ZeroHVector("cannot marginalise an all-zero h table")
    root = np.sqrt(c)
    return table.sum(axis=1) / root, table.sum(axis=0) / root


def marginalise_factors(h: DiscreteVec, sizes: list):
    """General k-factor version of the product-form projection.

    The flat h indexes the product alphabet in row-major order over
    ``sizes``.  Each factor keeps its marginal scaled so the factor masses
    multiply to the mass of h (the two-factor rule, applied k-ways).
    """
    sizes = [int(s) for s in sizes]
    if int(np.prod(sizes)) != h.size:
        raise DimMismatch("factor sizes do not multiply to the h length")
    table = h.vec.reshape(sizes)
    k = len(sizes)
    parts = []
    for axis in range(k):
        other = tuple(a for a in range(k) if a != axis)
        marg = table.sum(axis=other)
        parts.append(DiscreteVec(marg, h.logc / k))
    return parts


# --- interacting particle systems -------------------------------------------

@dataclass(frozen=True)
class ParticleSystemKernel:
    """Interacting forward kernel plus diagonalised backward matrices.

    ``forward`` builds the per-particle transition matrices from the full
    configuration; ``ktilde`` is a (steps, n, R, R) stack of state-free
    per-particle, per-time backward matrices.
    """

    forward: DiscreteInteracting
    ktilde: np.ndarray

    def __post_init__(self):
        kt = np.asarray(self.ktilde, dtype=float)
        if kt.ndim != 4 or kt.shape[1] != self.forward.n or kt.shape[2] != kt.shape[3]:
            raise DimMismatch("ktilde must have shape (steps, n, R, R)")
        if not np.allclose(kt.sum(axis=3), 1.0, atol=1e-12):
            raise DimMismatch("ktilde rows must sum to 1 within 1e-12")
        object.__setattr__(self, "ktilde", kt)

    @property
    def steps(self) -> int:
        return self.ktilde.shape[0]


def particles_pullback(mats: np.ndarray, h: DiscreteParticlesH) -> DiscreteParticlesH:
    """Per-particle pullback h'_i = K_i h_i for an (n, R, R) stack."""
    v = np.einsum("irs,is->ir", np.asarray(mats, dtype=float), h.vecs)
    return DiscreteParticlesH(v, h.logc)


def particles_leaf(observed: np.ndarray, size: int) -> DiscreteParticlesH:
    obs = np.asarray(observed, dtype=int)
    v = np.zeros((obs.shape[0], size))
    v[np.arange(obs.shape[0]), obs] = 1.0
    return DiscreteParticlesH(v)


def particles_forward_draw(
    h_num: DiscreteParticlesH,
    denom: DiscreteParticlesH,
    x: np.ndarray,
    mats: np.ndarray,
    u: np.ndarray,
):
    """Guided move of every particle given the full configuration x.

    Particle i lands on k with probability proportional to
    K_i(x)[x_i, k] h_i(k); the log-weight increment is
    sum_i ( log<K_i(x) h_i>_{x_i} - log<Ktilde_i h_i>_{x_i} ).
    """
    x = np.asarray(x, dtype=int)
    n = h_num.n
    idx = np.arange(n)
    rows = np.asarray(mats, dtype=float)[idx, x, :] * h_num.vecs
    s = rows.sum(axis=1)
    d = denom.vecs[idx, x]
    if np.any(s <= 0) or np.any(d <= 0):
        raise ZeroDenominator("guided particle transition impossible")
    cum = np.cumsum(rows, axis=1)
    ks = (cum < (u * s)[:, None]).sum(axis=1)
    ks = np.minimum(ks, h_num.size - 1)
    inc = float(
        np.sum(h_num.logc + np.log(s)) - np.sum(denom.logc + np.log(d))
    )
    return inc, ks.astype(int)


@dataclass(frozen=True)
class ParticleFilterResult:
    """Backward pass output on the diagonalised particle system.

    ``h`` stacks the fused per-time h arrays (times 0..steps) and ``denom``
    the pre-fusion pullbacks used as weight denominators for each step.
    """

    h: np.ndarray        # (steps + 1, n, R)
    h_logc: np.ndarray   # (steps + 1, n)
    denom: np.ndarray    # (steps, n, R)
    denom_logc: np.ndarray  # (steps, n)

    def h_at(self, t: int) -> DiscreteParticlesH:
        return DiscreteParticlesH(self.h[t], self.h_logc[t])

    def denom_at(self, t: int) -> DiscreteParticlesH:
        return DiscreteParticlesH(self.denom[t], self.denom_logc[t])


def particle_backward_pass(system: ParticleSystemKernel, observations: dict) -> ParticleFilterResult:
    """Filter each particle on its own line graph.

    ``observations`` maps a time index (0..steps) to an (n,) configuration
    observed at that time.  Between observations each particle runs the
    vector recursion h_i <- Ktilde_i h_i; at observed times the h is fused
    with the point-mass leaf vector of the observed symbol.
    """
    T = system.steps
    n, R = system.forward.n, system.forward.size
    h = np.zeros((T + 1, n, R))
    h_logc = np.zeros((T + 1, n))
    denom = np.zeros((T, n, R))
    denom_logc = np.zeros((T, n))

    def fused(t, base: DiscreteParticlesH | None) -> DiscreteParticlesH:
        if t in observations:
            leaf = particles_leaf(np.asarray(observations[t], dtype=int), R)
            if base is None:
                return leaf
            return DiscreteParticlesH(base.vecs * leaf.vecs, base.logc + leaf.logc)
        if base is None:
            return DiscreteParticlesH(np.ones((n, R)))
        return base

    cur = fused(T, None)
    h[T], h_logc[T] = cur.vecs, cur.logc
    for t in range(T - 1, -1, -1):
        back = particles_pullback(system.ktilde[t], cur)
        denom[t], denom_logc[t] = back.vecs, back.logc
        cur = fused(t, back)
        h[t], h_logc[t] = cur.vecs, cur.logc
    return ParticleFilterResult(h, h_logc, denom, denom_logc)
