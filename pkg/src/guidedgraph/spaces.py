"""State space descriptors.

A space tells the graph validator what kind of values live at a vertex:
Euclidean vectors, a finite alphabet, the positive half-line, or a product
of those.  Kernels carry a source and a target space so that edges can be
dimension-checked at graph build time.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DimMismatch


@dataclass(frozen=True)
class Euclidean:
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise DimMismatch(f"Euclidean dimension must be >= 1, got {self.dim}")


@dataclass(frozen=True)
class Finite:
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise DimMismatch(f"finite alphabet needs >= 2 symbols, got {self.size}")


@dataclass(frozen=True)
class HalfLine:
    pass


@dataclass(frozen=True)
class ProductSpace:
    parts: tuple

    def __post_init__(self):
        if len(self.parts) < 2:
            raise DimMismatch("a product space needs at least two factors")


StateSpace = Euclidean | Finite | HalfLine | ProductSpace


def space_product(spaces: list) -> StateSpace:
    """Combine parent spaces into the source space the child kernel consumes.

    Adjacent Euclidean factors merge into a single Euclidean block (states
    are concatenated vectors); anything else becomes a ProductSpace.
    """
    if len(spaces) == 1:
        return spaces[0]
    if all(isinstance(s, Euclidean) for s in spaces):
        return Euclidean(sum(s.dim for s in spaces))
    flat = []
    for s in spaces:
        if isinstance(s, ProductSpace):
            flat.extend(s.parts)
        else:
            flat.append(s)
    return ProductSpace(tuple(flat))


def space_to_json(space: StateSpace) -> dict:
    if isinstance(space, Euclidean):
        return {"kind": "euclidean", "dim": space.dim}
    if isinstance(space, Finite):
        return {"kind": "finite", "size": space.size}
    if isinstance(space, HalfLine):
        return {"kind": "halfline"}
    return {"kind": "product", "parts": [space_to_json(p) for p in space.parts]}


def space_from_json(doc: dict) -> StateSpace:
    kind = doc["kind"]
    if kind == "euclidean":
        return Euclidean(doc["dim"])
    if kind == "finite":
        return Finite(doc["size"])
    if kind == "halfline":
        return HalfLine()
    if kind == "product":
        return ProductSpace(tuple(space_from_json(p) for p in doc["parts"]))
    raise DimMismatch(f"unknown space kind {kind!r}")
