"""Closed-form parametrisations of h-functions.

An h-function summarises, at some vertex, the likelihood of all observations
downstream of that vertex as a function of the vertex state.  Backward
filtering only stays tractable when h keeps a closed parametric form under
pullback and fusion, so each supported family gets its own tagged class:

* ``GaussianCanonical`` -- log h(y) = c - y'Hy/2 + y'F
* ``DiscreteVec``       -- a nonnegative vector over a finite alphabet
* ``DiscreteParticlesH``-- product of per-particle DiscreteVec's, stored
                           as arrays for vectorised particle systems
* ``GammaH``            -- h(y) = GammaDensity(target - y; A, rate)
* ``ConstantH``         -- a positive constant (neutral element)
* ``ProductH``          -- generic product over a tuple-valued state

Discrete vectors are kept normalised to sum one with the scale folded into
``logc`` so that long chains cannot underflow; forward sampling is invariant
to that positive rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DimMismatch, SingularH, UnsupportedFusion, ZeroHVector

_LOG2PI = float(np.log(2.0 * np.pi))


def _as_matrix(H) -> np.ndarray:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[0] != H.shape[1]:
        raise DimMismatch(f"precision matrix must be square, got {H.shape}")
    return 0.5 * (H + H.T)


def log_phi_can_at_zero(F: np.ndarray, H: np.ndarray) -> float:
    """log density at 0 of the canonical normal with potential F, precision H."""
    d = F.shape[0]
    sign, logdet = np.linalg.slogdet(H)
    if sign <= 0:
        raise SingularH("precision matrix is not positive definite")
    quad = float(F @ np.linalg.solve(H, F))
    return 0.5 * logdet - 0.5 * d * _LOG2PI - 0.5 * quad


@dataclass(frozen=True)
class GaussianCanonical:
    """Gaussian h in canonical form: log h(y) = c - y'Hy/2 + y'F."""

    c: float
    F: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", np.atleast_1d(np.asarray(self.F, dtype=float)))
        object.__setattr__(self, "H", _as_matrix(self.H))
        if self.F.shape[0] != self.H.shape[0]:
            raise DimMismatch("potential vector and precision matrix disagree")

    @property
    def dim(self) -> int:
        return self.F.shape[0]

    def log_at(self, y) -> float:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return float(self.c - 0.5 * y @ self.H @ y + y @ self.F)

    def log_mass(self) -> float:
        """log of the total Lebesgue mass, log varpi = c - log phi_can(0; F, H)."""
        return self.c - log_phi_can_at_zero(self.F, self.H)

    def scaled(self, log_gamma: float) -> "GaussianCanonical":
        return GaussianCanonical(self.c + log_gamma, self.F, self.H)


@dataclass(frozen=True)
class DiscreteVec:
    """h over a finite alphabet, normalised to sum 1 with scale in logc."""

    vec: np.ndarray
    logc: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.vec, dtype=float)
        if v.ndim != 1:
            raise DimMismatch("discrete h must be a vector")
        if np.any(v < 0):
            raise ZeroHVector("discrete h has negative entries")
        s = v.sum()
        if s <= 0 or not np.isfinite(s):
            raise ZeroHVector("discrete h vector is zero or non-finite")
        object.__setattr__(self, "vec", v / s)
        object.__setattr__(self, "logc", float(self.logc) + float(np.log(s)))

    @property
    def size(self) -> int:
        return self.vec.shape[0]

    def log_at(self, k) -> float:
        p = self.vec[int(k)]
        return float(self.logc + np.log(p)) if p > 0 else -np.inf

    def scaled(self, log_gamma: float) -> "DiscreteVec":
        return DiscreteVec(self.vec, self.logc + log_gamma)


@dataclass(frozen=True)
class DiscreteParticlesH:
    """Product of per-particle discrete h's, h(x) = prod_i h_i(x_i).

    ``vecs`` has shape (n, R) with rows normalised; ``logc`` has shape (n,).
    """

    vecs: np.ndarray
    logc: np.ndarray = None

    def __post_init__(self):
        v = np.asarray(self.vecs, dtype=float)
        if v.ndim != 2:
            raise DimMismatch("particle h must be an (n, R) array")
        if np.any(v < 0):
            raise ZeroHVector("particle h has negative entries")
        s = v.sum(axis=1)
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise ZeroHVector("some particle h vector is zero or non-finite")
        base = np.zeros(v.shape[0]) if self.logc is None else np.asarray(self.logc, dtype=float)
        object.__setattr__(self, "vecs", v / s[:, None])
        object.__setattr__(self, "logc", base + np.log(s))

    @property
    def n(self) -> int:
        return self.vecs.shape[0]

    @property
    def size(self) -> int:
        return self.vecs.shape[1]

    def log_at(self, x) -> float:
        x = np.asarray(x, dtype=int)
        p = self.vecs[np.arange(self.n), x]
        if np.any(p <= 0):
            return -np.inf
        return float(np.sum(self.logc) + np.sum(np.log(p)))

    def component(self, i: int) -> DiscreteVec:
        return DiscreteVec(self.vecs[i], float(self.logc[i]))


@dataclass(frozen=True)
class GammaH:
    """h(y) = GammaDensity(target - y; shape_a, rate) for y < target."""

    shape_a: float
    rate: float
    target: float

    def __post_init__(self):
        if self.shape_a <= 0 or self.rate <= 0:
            raise DimMismatch("Gamma h needs positive shape and rate")

    def log_at(self, y) -> float:
        d = self.target - float(y)
        if d <= 0:
            return -np.inf
        a, b = self.shape_a, self.rate
        return float(a * np.log(b) - gammaln(a) + (a - 1.0) * np.log(d) - b * d)


@dataclass(frozen=True)
class ConstantH:
    logc: float = 0.0

    def log_at(self, _y) -> float:
        return float(self.logc)


@dataclass(frozen=True)
class ProductH:
    """Generic product h over a tuple-valued state."""

    parts: tuple

    def log_at(self, xs) -> float:
        if len(xs) != len(self.parts):
            raise DimMismatch("state tuple length does not match product h")
        return float(sum(p.log_at(x) for p, x in zip(self.parts, xs)))


HFun = (
    GaussianCanonical
    | DiscreteVec
    | DiscreteParticlesH
    | GammaH
    | ConstantH
    | ProductH
)


def fuse(hs: list) -> "HFun":
    """Pointwise product of h-functions over one common space.

    Gaussian fuses by summing (c, F, H); discrete by Hadamard product;
    particle products row-wise.  ConstantH acts as a neutral scale on any
    partner.  Gamma h's do not keep their form under products, so fusing
    two of them raises UnsupportedFusion (filter on a line graph instead).
    """
    if len(hs) == 0:
        raise UnsupportedFusion("fuse needs at least one h")
    if len(hs) == 1:
        return hs[0]

    shift = sum(h.logc for h in hs if isinstance(h, ConstantH))
    rest = [h for h in hs if not isinstance(h, ConstantH)]
    if not rest:
        return ConstantH(shift)
    if len(rest) == 1:
        return _scale(rest[0], shift)

    first = rest[0]
    if isinstance(first, GaussianCanonical):
        if not all(isinstance(h, GaussianCanonical) for h in rest):
            raise UnsupportedFusion("cannot fuse Gaussian h with other tags")
        c = sum(h.c for h in rest) + shift
        F = sum(h.F for h in rest)
        H = sum(h.H for h in rest)
        return GaussianCanonical(c, F, H)
    if isinstance(first, DiscreteVec):
        if not all(isinstance(h, DiscreteVec) for h in rest):
            raise UnsupportedFusion("cannot fuse discrete h with other tags")
        vec = rest[0].vec.copy()
        logc = rest[0].logc + shift
        for h in rest[1:]:
            vec = vec * h.vec
            logc += h.logc
        return DiscreteVec(vec, logc)
    if isinstance(first, DiscreteParticlesH):
        if not all(isinstance(h, DiscreteParticlesH) for h in rest):
            raise UnsupportedFusion("cannot fuse particle h with other tags")
        vecs = rest[0].vecs.copy()
        logc = rest[0].logc.copy() + shift / rest[0].n
        for h in rest[1:]:
            vecs = vecs * h.vecs
            logc = logc + h.logc
        return DiscreteParticlesH(vecs, logc)
    if isinstance(first, ProductH):
        if not all(isinstance(h, ProductH) and len(h.parts) == len(first.parts) for h in rest):
            raise UnsupportedFusion("cannot fuse product h with other tags")
        parts = tuple(
            fuse([h.parts[i] for h in rest]) for i in range(len(first.parts))
        )
        if shift:
            parts = (_scale(parts[0], shift),) + parts[1:]
        return ProductH(parts)
    raise UnsupportedFusion(f"fusion not defined for {type(first).__name__}")


def _scale(h: "HFun", log_gamma: float):
    if log_gamma == 0.0:
        return h
    if isinstance(h, (GaussianCanonical, DiscreteVec)):
        return h.scaled(log_gamma)
    if isinstance(h, DiscreteParticlesH):
        logc = h.logc.copy()
        logc[0] += log_gamma
        return DiscreteParticlesH(h.vecs, logc)
    if isinstance(h, ConstantH):
        return ConstantH(h.logc + log_gamma)
    if isinstance(h, ProductH):
        return ProductH((_scale(h.parts[0], log_gamma),) + h.parts[1:])
    raise UnsupportedFusion(f"cannot rescale {type(h).__name__}")


# --- serialization ---------------------------------------------------------

def hfun_to_json(h: "HFun") -> dict:
    if isinstance(h, GaussianCanonical):
        return {"tag": "gaussian", "c": h.c, "F": h.F.tolist(), "H": h.H.tolist()}
    if isinstance(h, DiscreteVec):
        return {"tag": "discrete", "vec": h.vec.tolist(), "logc": h.logc}
    if isinstance(h, DiscreteParticlesH):
        return {"tag": "particles", "vecs": h.vecs.tolist(), "logc": h.logc.tolist()}
    if isinstance(h, GammaH):
        return {"tag": "gamma", "shape_a": h.shape_a, "rate": h.rate, "target": h.target}
    if isinstance(h, ConstantH):
        return {"tag": "constant", "logc": h.logc}
    if isinstance(h, ProductH):
        return {"tag": "product", "parts": [hfun_to_json(p) for p in h.parts]}
    raise DimMismatch(f"cannot serialize {type(h).__name__}")


def hfun_from_json(doc: dict) -> "HFun":
    tag = doc["tag"]
    if tag == "gaussian":
        return GaussianCanonical(doc["c"], np.array(doc["F"]), np.array(doc["H"]))
    if tag == "discrete":
        return DiscreteVec(np.array(doc["vec"]), doc["logc"])
    if tag == "particles":
        return DiscreteParticlesH(np.array(doc["vecs"]), np.array(doc["logc"]))
    if tag == "gamma":
        return GammaH(doc["shape_a"], doc["rate"], doc["target"])
    if tag == "constant":
        return ConstantH(doc["logc"])
    if tag == "product":
        return ProductH(tuple(hfun_from_json(p) for p in doc["parts"]))
    raise DimMismatch(f"unknown h tag {tag!r}")
