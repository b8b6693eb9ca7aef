"""Directed acyclic graphical model of Markov transitions.

A :class:`TransitionGraph` holds the DAG structure, one transition kernel
per non-root vertex (the transition *into* that vertex from its parents),
observed values at the leaves, and a deterministic root state.  Graphs are
validated and frozen at build time; both passes read them concurrently.

The distinguished root is an explicit vertex with a fixed value.  Models
with several sources attach every source as a child of the root.  When a
vertex has several parents, the order in which its parents first appear in
the edge list fixes how their states are concatenated for its kernel.

Transition densities are taken with respect to a fixed reference measure
per state space (Lebesgue on Euclidean factors and the half-line, counting
on finite alphabets); state-dependent reference kernels are out of scope.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from types import MappingProxyType
from typing import Any

import numpy as np

from .errors import (
    CycleDetected,
    MissingKernel,
    ObservationOnLatent,
    SpaceMismatch,
)
from .kernels import kernel_from_json, kernel_to_json
from .spaces import (
    Euclidean,
    Finite,
    HalfLine,
    ProductSpace,
    StateSpace,
    space_product,
)

ROOT = "root"
LATENT = "latent"
LEAF = "leaf"


def value_matches_space(value, space: StateSpace) -> bool:
    if isinstance(space, Euclidean):
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return v.shape == (space.dim,)
    if isinstance(space, Finite):
        try:
            k = int(value)
        except (TypeError, ValueError):
            return False
        return 0 <= k < space.size
    if isinstance(space, HalfLine):
        try:
            return float(value) >= 0.0
        except (TypeError, ValueError):
            return False
    if isinstance(space, ProductSpace):
        if all(isinstance(p, Finite) for p in space.parts):
            v = np.asarray(value)
            return v.shape == (len(space.parts),) and all(
                value_matches_space(v[i], p) for i, p in enumerate(space.parts)
            )
        if not hasattr(value, "__len__") or len(value) != len(space.parts):
            return False
        return all(value_matches_space(v, p) for v, p in zip(value, space.parts))
    return False


@dataclass(frozen=True)
class TransitionGraph:
    root: int
    root_value: Any
    root_space: StateSpace
    roles: MappingProxyType
    parents: MappingProxyType
    children: MappingProxyType
    kernel_of: MappingProxyType
    observation_of: MappingProxyType
    topo_order: tuple  # non-root vertices, every parent before its children

    @property
    def vertices(self) -> tuple:
        return (self.root,) + self.topo_order

    def latents(self) -> tuple:
        return tuple(t for t in self.topo_order if self.roles[t] == LATENT)

    def leaves(self) -> tuple:
        return tuple(t for t in self.topo_order if self.roles[t] == LEAF)

    def space_of(self, t: int) -> StateSpace:
        if t == self.root:
            return self.root_space
        return self.kernel_of[t].target_space

    def parent_space(self, t: int) -> StateSpace:
        return space_product([self.space_of(u) for u in self.parents[t]])


def _toposort(vertices, parents, children) -> tuple:
    indeg = {t: len(parents[t]) for t in vertices}
    ready = sorted(t for t in vertices if indeg[t] == 0)
    order = []
    while ready:
        t = ready.pop(0)
        order.append(t)
        grew = False
        for c in children[t]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
                grew = True
        if grew:
            ready.sort()
    if len(order) != len(vertices):
        raise CycleDetected("edge list contains a directed cycle")
    return tuple(order)


def build_graph(
    vertices: list,
    edges: list,
    kernels: dict,
    observations: dict,
    root_value,
) -> TransitionGraph:
    """Validate and freeze a graphical model.

    Args:
        vertices: list of ``(vertex_id, role)`` with role in
            {"root", "latent", "leaf"}; exactly one root.
        edges: list of ``(parent, child)`` pairs.
        kernels: map vertex -> kernel of the transition into that vertex;
            required for every non-root vertex.
        observations: map leaf vertex -> observed value.
        root_value: the deterministic state at the root.
    """
    roles = {int(v): r for v, r in vertices}
    ids = list(roles)
    if len(ids) != len(set(ids)):
        raise SpaceMismatch("duplicate vertex ids")
    roots = [v for v, r in roles.items() if r == ROOT]
    if len(roots) != 1:
        raise SpaceMismatch(f"need exactly one root vertex, got {len(roots)}")
    root = roots[0]

    parents = {v: [] for v in ids}
    children = {v: [] for v in ids}
    seen = set()
    for s, t in edges:
        s, t = int(s), int(t)
        if s == t:
            raise CycleDetected(f"self-loop at vertex {s}")
        if s not in roles or t not in roles:
            raise SpaceMismatch(f"edge ({s}, {t}) references an unknown vertex")
        if (s, t) in seen:
            raise SpaceMismatch(f"parallel edge ({s}, {t})")
        seen.add((s, t))
        parents[t].append(s)
        children[s].append(t)

    if parents[root]:
        raise SpaceMismatch("the root vertex cannot have parents")
    for v, r in roles.items():
        if v == root:
            continue
        if not parents[v]:
            raise SpaceMismatch(f"vertex {v} has no parent; attach sources to the root")
        if r == LEAF and children[v]:
            raise SpaceMismatch(f"leaf {v} has children")
        if r == LATENT and not children[v]:
            raise ObservationOnLatent(
                f"vertex {v} is declared latent but has no children; "
                "childless vertices must be observed leaves"
            )

    for v, r in roles.items():
        if r == LEAF and v not in observations:
            raise ObservationOnLatent(f"leaf {v} has no observation")
        if r != LEAF and v in observations:
            raise ObservationOnLatent(f"observation attached to non-leaf vertex {v}")

    for v in ids:
        if v != root and v not in kernels:
            raise MissingKernel(f"vertex {v} has no transition kernel")
    if root in kernels:
        raise MissingKernel("the root vertex must not carry a kernel")

    order = _toposort(ids, parents, children)
    topo = tuple(t for t in order if t != root)

    # source-space check: a kernel consumes the product of its parents' states
    root_spaces = {kernels[c].source_space for c in children[root]}
    if len(root_spaces) > 1:
        raise SpaceMismatch("children of the root disagree about the root space")
    root_space = root_spaces.pop() if root_spaces else Euclidean(1)
    if not value_matches_space(root_value, root_space):
        raise SpaceMismatch(f"root value does not live in {root_space}")

    def space_of(v):
        return root_space if v == root else kernels[v].target_space

    for t in topo:
        want = space_product([space_of(u) for u in parents[t]])
        got = kernels[t].source_space
        if got != want:
            raise SpaceMismatch(
                f"kernel into vertex {t} consumes {got}, parents provide {want}"
            )
        if roles[t] == LEAF and not value_matches_space(
            observations[t], kernels[t].target_space
        ):
            raise SpaceMismatch(f"observation at leaf {t} has the wrong shape")

    return TransitionGraph(
        root=root,
        root_value=root_value,
        root_space=root_space,
        roles=MappingProxyType(dict(roles)),
        parents=MappingProxyType({v: tuple(p) for v, p in parents.items()}),
        children=MappingProxyType({v: tuple(c) for v, c in children.items()}),
        kernel_of=MappingProxyType(dict(kernels)),
        observation_of=MappingProxyType(dict(observations)),
        topo_order=topo,
    )


def reverse_topological_order(g: TransitionGraph) -> list:
    """Non-root vertices with every vertex after all of its children."""
    return list(reversed(g.topo_order))


def children_partition(g: TransitionGraph, s: int):
    """Split ch(s) into (latent children, leaf children)."""
    latent = [c for c in g.children[s] if g.roles[c] == LATENT]
    leaves = [c for c in g.children[s] if g.roles[c] == LEAF]
    return latent, leaves


# --- serialization ----------------------------------------------------------

def _value_to_json(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def graph_to_json(g: TransitionGraph) -> str:
    doc = {
        "vertices": [[v, g.roles[v]] for v in g.vertices],
        "edges": [[s, t] for s in g.vertices for t in g.children[s]],
        "kernels": {str(t): kernel_to_json(g.kernel_of[t]) for t in g.topo_order},
        "observations": {
            str(t): _value_to_json(g.observation_of[t]) for t in g.leaves()
        },
        "root": _value_to_json(g.root_value),
    }
    return json.dumps(doc, sort_keys=True)


def graph_from_json(text: str) -> TransitionGraph:
    doc = json.loads(text)
    kernels = {int(t): kernel_from_json(k) for t, k in doc["kernels"].items()}
    observations = {int(t): _coerce(v) for t, v in doc["observations"].items()}
    return build_graph(
        vertices=[(v, r) for v, r in doc["vertices"]],
        edges=[(s, t) for s, t in doc["edges"]],
        kernels=kernels,
        observations=observations,
        root_value=_coerce(doc["root"]),
    )


def _coerce(v):
    if isinstance(v, list):
        arr = np.asarray(v)
        return arr
    return v
