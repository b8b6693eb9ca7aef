"""Backward filtering and forward guided sampling on a transition graph.

The two passes factor through local rules, one per (kernel, h) family:

* ``backward`` pulls an h-function back through one edge's surrogate
  kernel, returning the message the forward pass will consume together
  with the pullback that continues the recursion;
* ``forward`` advances a weighted sample through one edge of the true
  kernel, incrementing the log importance weight by
  log (kappa h)(x) - log (kappa_tilde h)(x).

``run_backward_pass`` walks the graph leaf-to-root, fusing the h's of a
vertex's children before pulling back, and splitting product-space h's of
multi-parent vertices into per-parent factors (backward marginalisation)
so the DAG case stays structure preserving.  ``run_forward_pass`` then
samples root-to-leaves; it is a pure function of (graph, messages, seed).

Messages are kept in quotient form (numerator at the child, denominator at
the parent) and all weights live in log space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import discrete as dr
from . import gamma as gr
from . import gaussian as ga
from .errors import (
    SpaceMismatch,
    UnsupportedPair,
    ZeroDenominator,
)
from .graph import LEAF, TransitionGraph
from .hfun import (
    ConstantH,
    DiscreteParticlesH,
    DiscreteVec,
    GammaH,
    GaussianCanonical,
    HFun,
    ProductH,
    fuse,
)
from .kernels import (
    Dirac,
    DiscreteInteracting,
    DiscreteMatrix,
    Duplicate,
    GammaIncrement,
    GaussianAffine,
    GaussianNonlinear,
    IndependentParticles,
    KernelSpec,
)
from .rng import FreshInnovations, InnovationSource, Seed, normals_to_uniforms
from .spaces import Euclidean, Finite, ProductSpace


@dataclass(frozen=True)
class Message:
    """Quotient-form filtering message m(x, y) = numerator(y) / denominator(x)."""

    numerator: HFun
    denominator: HFun

    def log_at(self, x, y) -> float:
        return self.numerator.log_at(y) - self.denominator.log_at(x)


def message_to_json(m: Message) -> dict:
    from .hfun import hfun_to_json

    return {
        "numerator": hfun_to_json(m.numerator),
        "denominator": hfun_to_json(m.denominator),
    }


def message_from_json(doc: dict) -> Message:
    from .hfun import hfun_from_json

    return Message(
        hfun_from_json(doc["numerator"]), hfun_from_json(doc["denominator"])
    )


@dataclass(frozen=True)
class WeightedSample:
    """Log-weighted sample with its own splittable innovation seed."""

    logw: float
    state: Any
    seed: Seed
    increments: dict | None = None


def kernels_equal(a: KernelSpec, b: KernelSpec) -> bool:
    """Structural equality good enough to detect matching leaf kernels."""
    if a is b:
        return True
    if type(a) is not type(b):
        return False
    if isinstance(a, GaussianAffine):
        return (
            np.array_equal(a.Phi, b.Phi)
            and np.array_equal(a.beta, b.beta)
            and np.array_equal(a.Q, b.Q)
        )
    if isinstance(a, DiscreteMatrix):
        return np.array_equal(a.K, b.K)
    if isinstance(a, IndependentParticles):
        return np.array_equal(a.mats, b.mats)
    if isinstance(a, GammaIncrement):
        return a.alpha == b.alpha and a.rate_fn is b.rate_fn and a.clamp == b.clamp
    if isinstance(a, (Dirac, Duplicate)):
        return a == b
    return False


# --- leaf initialisation ------------------------------------------------------

def leaf_h(kernel: KernelSpec, observation) -> HFun:
    """h on the parent space of a leaf: the transition density at the datum."""
    if isinstance(kernel, GaussianAffine):
        return ga.leaf_init(observation, kernel.Phi, kernel.beta, kernel.Q)
    if isinstance(kernel, DiscreteMatrix):
        return dr.leaf_init_noisy(kernel.K, int(observation))
    if isinstance(kernel, Dirac):
        space = kernel.space
        if isinstance(space, Finite):
            return dr.leaf_init(int(observation), space.size)
        if isinstance(space, ProductSpace) and all(
            isinstance(p, Finite) for p in space.parts
        ):
            sizes = {p.size for p in space.parts}
            if len(sizes) == 1:
                return dr.particles_leaf(np.asarray(observation, dtype=int), sizes.pop())
        raise UnsupportedPair(f"no exact-observation rule on {space}")
    if isinstance(kernel, IndependentParticles):
        obs = np.asarray(observation, dtype=int)
        vecs = kernel.mats[np.arange(kernel.n), :, obs]
        return DiscreteParticlesH(vecs)
    if isinstance(kernel, GammaIncrement):
        rate = kernel.constant_rate
        if rate is None:
            raise UnsupportedPair("Gamma leaf initialisation needs a constant rate")
        return GammaH(kernel.alpha, rate, float(observation))
    raise UnsupportedPair(f"no leaf initialisation for {type(kernel).__name__}")


# --- backward map --------------------------------------------------------------

def backward(kernel_approx: KernelSpec, h: HFun):
    """Backward map: message plus pullback of h through the surrogate kernel."""
    if isinstance(h, ConstantH):
        return Message(h, h), h
    if isinstance(kernel_approx, Dirac):
        return Message(h, h), h
    if isinstance(kernel_approx, Duplicate):
        if isinstance(h, ProductH) and len(h.parts) == kernel_approx.k:
            pulled = fuse(list(h.parts))
        elif isinstance(h, DiscreteParticlesH) and h.n == kernel_approx.k:
            pulled = fuse([DiscreteVec(h.vecs[i], h.logc[i]) for i in range(h.n)])
        else:
            raise UnsupportedPair("duplication expects a product h with k factors")
        return Message(h, pulled), pulled
    if isinstance(kernel_approx, GaussianAffine) and isinstance(h, GaussianCanonical):
        pulled = ga.pullback_affine(h, kernel_approx.Phi, kernel_approx.beta, kernel_approx.Q)
        return Message(h, pulled), pulled
    if isinstance(kernel_approx, DiscreteMatrix) and isinstance(h, DiscreteVec):
        pulled = dr.pullback(kernel_approx.K, h)
        return Message(h, pulled), pulled
    if isinstance(kernel_approx, IndependentParticles) and isinstance(h, DiscreteParticlesH):
        pulled = dr.particles_pullback(kernel_approx.mats, h)
        return Message(h, pulled), pulled
    if isinstance(kernel_approx, GammaIncrement) and isinstance(h, GammaH):
        rate = kernel_approx.constant_rate
        if rate is None or abs(rate - h.rate) > 1e-12:
            raise UnsupportedPair(
                "Gamma backward needs the constant surrogate rate used by h"
            )
        pulled = gr.pullback_tilde(h, kernel_approx.alpha)
        return Message(h, pulled), pulled
    raise UnsupportedPair(
        f"no backward rule for ({type(kernel_approx).__name__}, {type(h).__name__})"
    )


def backward_marginalise(h: HFun, partition) -> ProductH:
    """Split an h over a product space into per-factor h's (product form).

    For Gaussian h, ``partition`` lists the coordinate blocks; for discrete
    h over a flattened product alphabet it lists the factor sizes.  Factor
    masses multiply back to the mass of h.
    """
    if isinstance(h, GaussianCanonical):
        return ga.marginalise(h, list(partition))
    if isinstance(h, DiscreteVec):
        return ProductH(tuple(dr.marginalise_factors(h, list(partition))))
    if isinstance(h, ProductH):
        return h
    if isinstance(h, DiscreteParticlesH):
        groups = list(partition)
        parts = []
        pos = 0
        for g in groups:
            parts.append(DiscreteParticlesH(h.vecs[pos : pos + g], h.logc[pos : pos + g]))
            pos += g
        return ProductH(tuple(parts))
    raise UnsupportedPair(f"no marginalisation rule for {type(h).__name__}")


# --- forward map ----------------------------------------------------------------

def innovation_dim(kernel: KernelSpec) -> int:
    if isinstance(kernel, (GaussianAffine, GaussianNonlinear)):
        return (
            kernel.beta.shape[0]
            if isinstance(kernel, GaussianAffine)
            else kernel.target_dim
        )
    if isinstance(kernel, DiscreteMatrix):
        return 1
    if isinstance(kernel, (DiscreteInteracting, IndependentParticles)):
        return kernel.n
    if isinstance(kernel, GammaIncrement):
        return 1
    if isinstance(kernel, (Dirac, Duplicate)):
        return 0
    raise UnsupportedPair(f"no innovation layout for {type(kernel).__name__}")


def forward_step(kernel: KernelSpec, message: Message, x, z: np.ndarray):
    """Advance one true-kernel edge from state x using innovations z.

    Returns (logw_increment, child state).  ``z`` holds
    ``innovation_dim(kernel)`` standard normals; uniform-driven families
    map them through the normal CDF.
    """
    num, den = message.numerator, message.denominator
    if isinstance(num, ConstantH):
        # h == 1 on this edge: the guided kernel is the prior itself
        return num.log_at(x) - den.log_at(x), _prior_draw(kernel, x, z)
    if isinstance(kernel, Dirac):
        return num.log_at(x) - den.log_at(x), x
    if isinstance(kernel, Duplicate):
        y = tuple(x for _ in range(kernel.k))
        return num.log_at(y) - den.log_at(x), y
    if isinstance(kernel, (GaussianAffine, GaussianNonlinear)):
        if not isinstance(num, GaussianCanonical):
            raise UnsupportedPair("Gaussian forward expects a Gaussian message")
        return ga.forward_draw(num, den.log_at, kernel.mean, kernel.cov, x, z)
    if isinstance(kernel, DiscreteMatrix):
        u = float(normals_to_uniforms(z)[0])
        return dr.forward_draw(num, den, int(x), kernel.K, u)
    if isinstance(kernel, (DiscreteInteracting, IndependentParticles)):
        mats = (
            kernel.matrices(x)
            if isinstance(kernel, DiscreteInteracting)
            else kernel.mats
        )
        u = normals_to_uniforms(z)
        return dr.particles_forward_draw(num, den, np.asarray(x, dtype=int), mats, u)
    if isinstance(kernel, GammaIncrement):
        u = float(normals_to_uniforms(z)[0])
        return gr.forward_draw(num, float(x), kernel.alpha, kernel.rate_at(x), u)
    raise UnsupportedPair(f"no forward rule for {type(kernel).__name__}")


def _prior_draw(kernel: KernelSpec, x, z: np.ndarray):
    """Unconditioned transition driven by the same innovation convention."""
    if isinstance(kernel, Dirac):
        return x
    if isinstance(kernel, Duplicate):
        return tuple(x for _ in range(kernel.k))
    if isinstance(kernel, (GaussianAffine, GaussianNonlinear)):
        Q = np.atleast_2d(np.asarray(kernel.cov(x), dtype=float))
        return kernel.mean(x) + np.linalg.cholesky(Q) @ z
    if isinstance(kernel, DiscreteMatrix):
        u = float(normals_to_uniforms(z)[0])
        cum = np.cumsum(kernel.K[int(x)])
        return int(min(np.searchsorted(cum, u, side="left"), kernel.K.shape[1] - 1))
    if isinstance(kernel, (DiscreteInteracting, IndependentParticles)):
        mats = (
            kernel.matrices(x)
            if isinstance(kernel, DiscreteInteracting)
            else kernel.mats
        )
        x = np.asarray(x, dtype=int)
        rows = mats[np.arange(kernel.n), x]
        cum = np.cumsum(rows, axis=1)
        u = normals_to_uniforms(z)
        ks = (cum < u[:, None]).sum(axis=1)
        return np.minimum(ks, kernel.size - 1).astype(int)
    if isinstance(kernel, GammaIncrement):
        from scipy.special import gammaincinv

        u = float(normals_to_uniforms(z)[0])
        return float(x) + float(gammaincinv(kernel.alpha, u)) / kernel.rate_at(x)
    raise UnsupportedPair(f"no prior sampler for {type(kernel).__name__}")


def forward(kernel: KernelSpec, message: Message, ws: WeightedSample) -> WeightedSample:
    """Single-edge guided move; splits the sample's seed to stay composable."""
    use, carry = ws.seed.split()
    z = use.generator().standard_normal(innovation_dim(kernel))
    inc, y = forward_step(kernel, message, ws.state, z)
    if not np.isfinite(inc):
        raise ZeroDenominator("forward weight vanished at the current state")
    return WeightedSample(ws.logw + inc, y, carry)


# --- weighted-sample algebra -----------------------------------------------------

def split_sample(ws: WeightedSample, at: int = 1):
    """Split a product-state sample into halves carrying sqrt of the weight.

    The seed splits into two independent streams; states left of ``at`` go
    to the first half (unwrapped when singleton).
    """
    state = ws.state
    if not isinstance(state, tuple) or not 0 < at < len(state):
        raise SpaceMismatch("split needs a tuple state and an interior cut")
    left = state[:at] if at > 1 else state[0]
    right = state[at:] if len(state) - at > 1 else state[at]
    s1, s2 = ws.seed.split()
    half = 0.5 * ws.logw
    return WeightedSample(half, left, s1), WeightedSample(half, right, s2)


def join_samples(ws1: WeightedSample, ws2: WeightedSample) -> WeightedSample:
    """Inverse of split: weights multiply and the first seed is adopted."""
    return WeightedSample(ws1.logw + ws2.logw, (ws1.state, ws2.state), ws1.seed)


def duplicate_forward(k: int, ws: WeightedSample):
    """k weighted copies, each carrying the k-th root of the weight."""
    if k < 2:
        raise SpaceMismatch("duplication needs k >= 2")
    seeds = []
    rest = ws.seed
    for _ in range(k - 1):
        s, rest = rest.split()
        seeds.append(s)
    seeds.append(rest)
    return [WeightedSample(ws.logw / k, ws.state, s) for s in seeds]


# --- optics -----------------------------------------------------------------------

@dataclass(frozen=True)
class GuidedOptic:
    """Paired backward/forward transformer for one composable block.

    ``backward_fn`` maps an h to (message, pulled-back h); ``forward_fn``
    consumes exactly the message produced for the same block.
    """

    backward_fn: Callable
    forward_fn: Callable
    source_space: Any
    target_space: Any

    def backward(self, h: HFun):
        return self.backward_fn(h)

    def forward(self, message, ws: WeightedSample) -> WeightedSample:
        return self.forward_fn(message, ws)


def optic_of(kernel: KernelSpec, kernel_approx: KernelSpec | None = None) -> GuidedOptic:
    approx = kernel if kernel_approx is None else kernel_approx
    if approx.source_space != kernel.source_space or approx.target_space != kernel.target_space:
        raise SpaceMismatch("surrogate kernel must share the true kernel's spaces")

    def fwd(message, ws):
        return forward(kernel, message, ws)

    return GuidedOptic(
        backward_fn=lambda h: backward(approx, h),
        forward_fn=fwd,
        source_space=kernel.source_space,
        target_space=kernel.target_space,
    )


def identity_optic(space) -> GuidedOptic:
    k = Dirac(space)
    return optic_of(k)


def compose_sequential(o1: GuidedOptic, o2: GuidedOptic) -> GuidedOptic:
    """o1 feeds o2: backward runs right-to-left, forward left-to-right."""
    if o1.target_space != o2.source_space:
        raise SpaceMismatch(
            f"cannot chain {o1.target_space} into {o2.source_space}"
        )

    def bwd(h):
        m2, h1 = o2.backward(h)
        m1, h0 = o1.backward(h1)
        return (m1, m2), h0

    def fwd(message, ws):
        m1, m2 = message
        return o2.forward(m2, o1.forward(m1, ws))

    return GuidedOptic(bwd, fwd, o1.source_space, o2.target_space)


def compose_parallel(o1: GuidedOptic, o2: GuidedOptic) -> GuidedOptic:
    """Independent blocks side by side, on the product of their spaces."""

    def bwd(h):
        if not isinstance(h, ProductH) or len(h.parts) != 2:
            raise SpaceMismatch("parallel backward expects a two-factor product h")
        m1, a1 = o1.backward(h.parts[0])
        m2, a2 = o2.backward(h.parts[1])
        return (m1, m2), ProductH((a1, a2))

    def fwd(message, ws):
        m1, m2 = message
        w1, w2 = split_sample(ws)
        return join_samples(o1.forward(m1, w1), o2.forward(m2, w2))

    from .spaces import space_product

    return GuidedOptic(
        bwd,
        fwd,
        space_product([o1.source_space, o2.source_space]),
        space_product([o1.target_space, o2.target_space]),
    )


# --- graph passes -------------------------------------------------------------------

@dataclass(frozen=True)
class BackwardPass:
    """Everything the forward pass needs, keyed by vertex."""

    messages: dict
    leaf_edge_h: dict
    h_root: HFun
    log_h0: float
    approx: dict
    regularised: frozenset = frozenset()


def run_backward_pass(
    graph: TransitionGraph,
    approx_kernels: dict | None = None,
    leaf_regularisers: dict | None = None,
    tree_parent: dict | None = None,
) -> BackwardPass:
    """Filter h-functions from the leaves to the root.

    Args:
        graph: validated transition graph.
        approx_kernels: per-vertex surrogate kernels for the backward side;
            defaults to the forward kernels where omitted.
        leaf_regularisers: optional h-factors fused into a leaf's
            initialisation (artificial observations making the pullback
            integrable); the forward pass removes the bias exactly.
        tree_parent: for a multi-parent vertex t, filter only through the
            designated parent ``tree_parent[t]`` and send a constant to the
            others, instead of backward marginalisation.
    """
    approx_kernels = approx_kernels or {}
    leaf_regularisers = leaf_regularisers or {}
    tree_parent = tree_parent or {}
    approx = {
        t: approx_kernels.get(t, graph.kernel_of[t]) for t in graph.topo_order
    }

    contrib = {v: [] for v in graph.vertices}
    messages: dict = {}
    leaf_edge_h: dict = {}

    for t in reversed(graph.topo_order):
        parents = graph.parents[t]
        if graph.roles[t] == LEAF:
            if len(parents) != 1:
                raise SpaceMismatch("leaves must hang off a single parent")
            h_edge = leaf_h(approx[t], graph.observation_of[t])
            if t in leaf_regularisers:
                h_edge = fuse([h_edge, leaf_regularisers[t]])
            leaf_edge_h[t] = h_edge
            contrib[parents[0]].append(h_edge)
            continue

        # subtree-filtered DAGs can leave a vertex with no incoming factors,
        # which means h == 1 there and the guided kernel is the prior
        h_t = fuse(contrib[t]) if contrib[t] else ConstantH(0.0)
        if len(parents) == 1:
            message, pulled = backward(approx[t], h_t)
            messages[t] = message
            contrib[parents[0]].append(pulled)
        elif t in tree_parent:
            u_star = tree_parent[t]
            if u_star not in parents:
                raise SpaceMismatch(f"{u_star} is not a parent of {t}")
            if approx[t].source_space != graph.space_of(u_star):
                raise SpaceMismatch(
                    f"subtree surrogate into {t} must consume parent {u_star}'s space"
                )
            _, pulled = backward(approx[t], h_t)
            factors = tuple(
                pulled if u == u_star else ConstantH(0.0) for u in parents
            )
            messages[t] = Message(h_t, _parent_product(graph, t, factors))
            contrib[u_star].append(pulled)
        else:
            _, pulled = backward(approx[t], h_t)
            partition = _parent_partition(graph, t)
            product = backward_marginalise(pulled, partition)
            messages[t] = Message(h_t, _parent_product(graph, t, product.parts))
            for u, part in zip(parents, product.parts):
                contrib[u].append(part)

    h_root = fuse(contrib[graph.root]) if contrib[graph.root] else ConstantH(0.0)
    log_h0 = h_root.log_at(graph.root_value)
    return BackwardPass(
        messages,
        leaf_edge_h,
        h_root,
        log_h0,
        approx,
        frozenset(leaf_regularisers),
    )


def _parent_partition(graph: TransitionGraph, t: int):
    """Blocks (Gaussian) or factor sizes (discrete) of t's parent product."""
    spaces = [graph.space_of(u) for u in graph.parents[t]]
    if all(isinstance(s, Euclidean) for s in spaces):
        blocks, pos = [], 0
        for s in spaces:
            blocks.append(list(range(pos, pos + s.dim)))
            pos += s.dim
        return blocks
    if all(isinstance(s, Finite) for s in spaces):
        return [s.size for s in spaces]
    raise SpaceMismatch(f"cannot split the parent product of vertex {t}")


def _parent_product(graph: TransitionGraph, t: int, factors) -> HFun:
    """Denominator h evaluated as a product of per-parent factors."""
    spaces = [graph.space_of(u) for u in graph.parents[t]]

    class _SplitProduct(ProductH):
        def log_at(self, x):
            vals = _split_state(x, spaces)
            return float(sum(p.log_at(v) for p, v in zip(self.parts, vals)))

    return _SplitProduct(tuple(factors))


def _split_state(x, spaces):
    if all(isinstance(s, Euclidean) for s in spaces):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out, pos = [], 0
        for s in spaces:
            out.append(x[pos : pos + s.dim])
            pos += s.dim
        return out
    if isinstance(x, tuple) and len(x) == len(spaces):
        return list(x)
    raise SpaceMismatch("cannot split the joint parent state")


def _gather_parent_state(graph: TransitionGraph, t: int, values: dict):
    parents = graph.parents[t]
    if len(parents) == 1:
        return values[parents[0]]
    spaces = [graph.space_of(u) for u in parents]
    if all(isinstance(s, Euclidean) for s in spaces):
        return np.concatenate([np.atleast_1d(np.asarray(values[u], dtype=float)) for u in parents])
    return tuple(values[u] for u in parents)


def innovation_layout(graph: TransitionGraph):
    """Frozen per-vertex innovation slots, in topological order."""
    layout = []
    for t in graph.topo_order:
        if graph.roles[t] == LEAF:
            continue
        layout.append((t, innovation_dim(graph.kernel_of[t])))
    return layout


def total_innovation_dim(graph: TransitionGraph) -> int:
    return sum(d for _, d in innovation_layout(graph))


def _forward_pass(graph: TransitionGraph, bp: BackwardPass, innovations, seed_out: Seed):
    values = {graph.root: graph.root_value}
    increments: dict = {}
    logw = 0.0
    for t in graph.topo_order:
        x = _gather_parent_state(graph, t, values)
        if graph.roles[t] == LEAF:
            true_k = graph.kernel_of[t]
            if kernels_equal(true_k, bp.approx[t]) and t not in bp.regularised:
                inc = 0.0  # matching leaf transitions cancel exactly
            else:
                inc = true_k.log_density(x, graph.observation_of[t]) - bp.leaf_edge_h[
                    t
                ].log_at(x)
            values[t] = graph.observation_of[t]
        else:
            kernel = graph.kernel_of[t]
            z = innovations.take(innovation_dim(kernel))
            inc, y = forward_step(kernel, bp.messages[t], x, z)
            values[t] = y
        if not np.isfinite(inc):
            raise ZeroDenominator(f"weight vanished at vertex {t}")
        increments[t] = inc
        logw += inc
    latent_values = {t: values[t] for t in graph.latents()}
    return WeightedSample(logw, latent_values, seed_out, increments)


def run_forward_pass(graph: TransitionGraph, bp: BackwardPass, seed: Seed) -> WeightedSample:
    """Sample the guided process once; deterministic in (graph, bp, seed)."""
    use, carry = seed.split()
    innovations = FreshInnovations(use.generator())
    return _forward_pass(graph, bp, innovations, carry)


def run_forward_with_innovations(
    graph: TransitionGraph, bp: BackwardPass, z: np.ndarray, seed: Seed | None = None
) -> WeightedSample:
    """Deterministic forward pass driven by an explicit innovation vector."""
    innovations = InnovationSource(z)
    out = _forward_pass(graph, bp, innovations, seed or Seed.from_int(0))
    return out


def smoothing_marginals(graph: TransitionGraph, bp: BackwardPass):
    """Exact Gaussian smoothing marginals on a tree of affine kernels.

    Valid when the backward pass used the forward kernels themselves (the
    per-state weights are then constant and the guided pushforward is the
    conditional law).  Returns ``{vertex: (mean, cov)}`` over latents.
    """
    root_dim = graph.root_space.dim if isinstance(graph.root_space, Euclidean) else None
    if root_dim is None:
        raise SpaceMismatch("Gaussian marginals need Euclidean states")
    out = {}
    mean0 = np.atleast_1d(np.asarray(graph.root_value, dtype=float))
    moments = {graph.root: (mean0, np.zeros((root_dim, root_dim)))}
    for t in graph.topo_order:
        if graph.roles[t] == LEAF:
            continue
        parents = graph.parents[t]
        if len(parents) != 1:
            raise SpaceMismatch("marginal propagation is defined on trees only")
        kernel = graph.kernel_of[t]
        if not isinstance(kernel, GaussianAffine):
            raise SpaceMismatch("marginal propagation needs affine kernels")
        num = bp.messages[t].numerator
        mean, cov = moments[parents[0]]
        m, C = ga.forward_marginal(num, kernel.Phi, kernel.beta, kernel.Q, mean, cov)
        moments[t] = (m, C)
        out[t] = (m, C)
    return out
