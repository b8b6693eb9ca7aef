"""Tagged descriptions of forward transition kernels.

Every kernel knows its source and target space so graphs can be validated
at build time.  Function-valued fields (nonlinear means, particle builders,
state-dependent rates) make a kernel non-serialisable; the JSON codec covers
the numeric subset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln

from .errors import DimMismatch
from .spaces import (
    Euclidean,
    Finite,
    HalfLine,
    ProductSpace,
    StateSpace,
    space_from_json,
    space_to_json,
)

_LOG2PI = float(np.log(2.0 * np.pi))


def _check_spd(Q: np.ndarray, what: str):
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[0] != Q.shape[1]:
        raise DimMismatch(f"{what} must be square")
    if not np.allclose(Q, Q.T, atol=1e-10):
        raise DimMismatch(f"{what} must be symmetric")
    try:
        np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        raise DimMismatch(f"{what} must be positive definite") from None
    return 0.5 * (Q + Q.T)


def _check_stochastic(K: np.ndarray, what: str = "transition matrix") -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim != 2:
        raise DimMismatch(f"{what} must be 2-D")
    if np.any(K < -1e-15):
        raise DimMismatch(f"{what} has negative entries")
    if not np.allclose(K.sum(axis=1), 1.0, atol=1e-12):
        raise DimMismatch(f"{what} rows must sum to 1 within 1e-12")
    return np.clip(K, 0.0, None)


@dataclass(frozen=True)
class GaussianAffine:
    """y | x ~ Normal(Phi x + beta, Q)."""

    Phi: np.ndarray
    beta: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        Q = _check_spd(self.Q, "noise covariance Q")
        if Phi.shape[0] != beta.shape[0] or Q.shape[0] != beta.shape[0]:
            raise DimMismatch("Phi, beta, Q target dimensions disagree")
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "Q", Q)

    @property
    def source_space(self) -> StateSpace:
        return Euclidean(self.Phi.shape[1])

    @property
    def target_space(self) -> StateSpace:
        return Euclidean(self.beta.shape[0])

    def mean(self, x) -> np.ndarray:
        return self.Phi @ np.atleast_1d(np.asarray(x, dtype=float)) + self.beta

    def cov(self, _x) -> np.ndarray:
        return self.Q

    def log_density(self, x, y) -> float:
        mu = self.mean(x)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        L = np.linalg.cholesky(self.Q)
        z = np.linalg.solve(L, y - mu)
        return float(-0.5 * z @ z - np.log(np.diag(L)).sum() - 0.5 * len(mu) * _LOG2PI)


@dataclass(frozen=True)
class GaussianNonlinear:
    """y | x ~ Normal(mean_fn(x), cov_fn(x)); forward sampling only."""

    mean_fn: Callable
    cov_fn: Callable
    source_dim: int
    target_dim: int

    @property
    def source_space(self) -> StateSpace:
        return Euclidean(self.source_dim)

    @property
    def target_space(self) -> StateSpace:
        return Euclidean(self.target_dim)

    def mean(self, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.mean_fn(np.asarray(x, dtype=float)), dtype=float))

    def cov(self, x) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.cov_fn(np.asarray(x, dtype=float)), dtype=float))

    def log_density(self, x, y) -> float:
        mu, Q = self.mean(x), self.cov(x)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        L = np.linalg.cholesky(Q)
        z = np.linalg.solve(L, y - mu)
        return float(-0.5 * z @ z - np.log(np.diag(L)).sum() - 0.5 * len(mu) * _LOG2PI)


@dataclass(frozen=True)
class DiscreteMatrix:
    """Finite-state transition by a row-stochastic matrix."""

    K: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "K", _check_stochastic(self.K))

    @property
    def source_space(self) -> StateSpace:
        return Finite(self.K.shape[0])

    @property
    def target_space(self) -> StateSpace:
        return Finite(self.K.shape[1])

    def log_density(self, x, y) -> float:
        p = self.K[int(x), int(y)]
        return float(np.log(p)) if p > 0 else -np.inf


@dataclass(frozen=True)
class DiscreteInteracting:
    """n interacting particles over a common alphabet.

    Conditional on the full configuration x, particles move independently;
    ``build_all(x)`` returns the stacked (n, R, R) per-particle transition
    matrices, which may depend on the whole configuration (that is where the
    interaction lives).  ``neighborhood`` is caller metadata, e.g. a radius.
    """

    n: int
    size: int
    build_all: Callable
    neighborhood: object = None

    @property
    def source_space(self) -> StateSpace:
        return ProductSpace(tuple(Finite(self.size) for _ in range(self.n)))

    @property
    def target_space(self) -> StateSpace:
        return ProductSpace(tuple(Finite(self.size) for _ in range(self.n)))

    def matrices(self, x) -> np.ndarray:
        mats = np.asarray(self.build_all(np.asarray(x, dtype=int)), dtype=float)
        if mats.shape != (self.n, self.size, self.size):
            raise DimMismatch("particle kernel builder returned wrong shape")
        return mats

    def log_density(self, x, y) -> float:
        mats = self.matrices(x)
        x = np.asarray(x, dtype=int)
        y = np.asarray(y, dtype=int)
        p = mats[np.arange(self.n), x, y]
        if np.any(p <= 0):
            return -np.inf
        return float(np.log(p).sum())


@dataclass(frozen=True)
class IndependentParticles:
    """State-independent product of per-particle matrices, shape (n, R, R).

    This is the diagonalised stand-in used on the backward side of an
    interacting system: every particle filters on its own line graph.
    """

    mats: np.ndarray

    def __post_init__(self):
        mats = np.asarray(self.mats, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise DimMismatch("expected an (n, R, R) stack of matrices")
        if not np.allclose(mats.sum(axis=2), 1.0, atol=1e-12):
            raise DimMismatch("particle matrices must be row-stochastic")
        object.__setattr__(self, "mats", np.clip(mats, 0.0, None))

    @property
    def n(self) -> int:
        return self.mats.shape[0]

    @property
    def size(self) -> int:
        return self.mats.shape[1]

    @property
    def source_space(self) -> StateSpace:
        return ProductSpace(tuple(Finite(self.size) for _ in range(self.n)))

    @property
    def target_space(self) -> StateSpace:
        return ProductSpace(tuple(Finite(self.size) for _ in range(self.n)))


@dataclass(frozen=True)
class GammaIncrement:
    """y = x + Gamma(alpha, rate_fn(x)) on the half-line.

    ``rate_fn`` may be a constant (then the kernel is usable on the backward
    side) or a state-dependent callable, clamped to [1/clamp, clamp].
    """

    alpha: float
    rate_fn: object
    clamp: float = 1e6

    def __post_init__(self):
        if self.alpha <= 0:
            raise DimMismatch("Gamma increment shape must be positive")
        if self.clamp < 1.0:
            raise DimMismatch("rate clamp must be >= 1")

    @property
    def source_space(self) -> StateSpace:
        return HalfLine()

    @property
    def target_space(self) -> StateSpace:
        return HalfLine()

    @property
    def constant_rate(self) -> float | None:
        return float(self.rate_fn) if not callable(self.rate_fn) else None

    def rate_at(self, x) -> float:
        r = self.rate_fn(float(x)) if callable(self.rate_fn) else float(self.rate_fn)
        return float(np.clip(r, 1.0 / self.clamp, self.clamp))

    def log_density(self, x, y) -> float:
        d = float(y) - float(x)
        if d <= 0:
            return -np.inf
        a, b = self.alpha, self.rate_at(x)
        return float(a * np.log(b) - gammaln(a) + (a - 1.0) * np.log(d) - b * d)


@dataclass(frozen=True)
class Dirac:
    """Identity kernel: the child copies the parent state exactly."""

    space: StateSpace

    @property
    def source_space(self) -> StateSpace:
        return self.space

    @property
    def target_space(self) -> StateSpace:
        return self.space

    def log_density(self, x, y) -> float:
        # point mass with respect to its own reference: an indicator
        same = np.array_equal(np.asarray(x), np.asarray(y))
        return 0.0 if same else -np.inf


@dataclass(frozen=True)
class Duplicate:
    """k-fold copy of the input state onto a product of k identical factors."""

    k: int
    space: StateSpace

    def __post_init__(self):
        if self.k < 2:
            raise DimMismatch("duplication needs k >= 2")

    @property
    def source_space(self) -> StateSpace:
        return self.space

    @property
    def target_space(self) -> StateSpace:
        return ProductSpace(tuple(self.space for _ in range(self.k)))


KernelSpec = (
    GaussianAffine
    | GaussianNonlinear
    | DiscreteMatrix
    | DiscreteInteracting
    | IndependentParticles
    | GammaIncrement
    | Dirac
    | Duplicate
)


# --- serialization (numeric kernels only) -----------------------------------

def kernel_to_json(k: KernelSpec) -> dict:
    if isinstance(k, GaussianAffine):
        return {
            "kind": "gaussian_affine",
            "Phi": k.Phi.tolist(),
            "beta": k.beta.tolist(),
            "Q": k.Q.tolist(),
        }
    if isinstance(k, DiscreteMatrix):
        return {"kind": "discrete_matrix", "K": k.K.tolist()}
    if isinstance(k, IndependentParticles):
        return {"kind": "independent_particles", "mats": k.mats.tolist()}
    if isinstance(k, GammaIncrement) and k.constant_rate is not None:
        return {
            "kind": "gamma_increment",
            "alpha": k.alpha,
            "rate": k.constant_rate,
            "clamp": k.clamp,
        }
    if isinstance(k, Dirac):
        return {"kind": "dirac", "space": space_to_json(k.space)}
    if isinstance(k, Duplicate):
        return {"kind": "duplicate", "k": k.k, "space": space_to_json(k.space)}
    raise DimMismatch(
        f"{type(k).__name__} holds function-valued fields and cannot be serialized"
    )


def kernel_from_json(doc: dict) -> KernelSpec:
    kind = doc["kind"]
    if kind == "gaussian_affine":
        return GaussianAffine(np.array(doc["Phi"]), np.array(doc["beta"]), np.array(doc["Q"]))
    if kind == "discrete_matrix":
        return DiscreteMatrix(np.array(doc["K"]))
    if kind == "independent_particles":
        return IndependentParticles(np.array(doc["mats"]))
    if kind == "gamma_increment":
        return GammaIncrement(doc["alpha"], doc["rate"], doc.get("clamp", 1e6))
    if kind == "dirac":
        return Dirac(space_from_json(doc["space"]))
    if kind == "duplicate":
        return Duplicate(doc["k"], space_from_json(doc["space"]))
    raise DimMismatch(f"unknown kernel kind {kind!r}")
