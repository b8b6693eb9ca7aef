"""Guided-process inference on directed graphical models of Markov kernels.

Backward-filter closed-form h-functions from the observations to the root,
then forward-sample the guided process with importance weights, and run
exact-target inference (importance sampling, preconditioned Crank-Nicolson,
pseudo-marginal Metropolis-Hastings, parameter moves) on top.
"""

from .engine import (
    BackwardPass,
    GuidedOptic,
    Message,
    WeightedSample,
    backward,
    backward_marginalise,
    compose_parallel,
    compose_sequential,
    duplicate_forward,
    forward,
    identity_optic,
    innovation_layout,
    join_samples,
    message_from_json,
    message_to_json,
    optic_of,
    run_backward_pass,
    run_forward_pass,
    run_forward_with_innovations,
    smoothing_marginals,
    split_sample,
    total_innovation_dim,
)
from .graph import (
    TransitionGraph,
    build_graph,
    children_partition,
    graph_from_json,
    graph_to_json,
    reverse_topological_order,
)
from .hfun import (
    ConstantH,
    DiscreteParticlesH,
    DiscreteVec,
    GammaH,
    GaussianCanonical,
    ProductH,
    fuse,
    hfun_from_json,
    hfun_to_json,
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
)
from .rng import Seed
from .spaces import Euclidean, Finite, HalfLine, ProductSpace

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
