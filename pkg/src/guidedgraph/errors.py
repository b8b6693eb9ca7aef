"""Exception hierarchy for the guidedgraph engine."""


class GuidedGraphError(Exception):
    """Base class for all engine errors."""


# --- graph construction -------------------------------------------------

class CycleDetected(GuidedGraphError):
    """The supplied edge list contains a directed cycle (or self-loop)."""


class MissingKernel(GuidedGraphError):
    """A non-root vertex has no transition kernel attached."""


class ObservationOnLatent(GuidedGraphError):
    """An observation was attached to a non-leaf vertex, or a leaf lacks one."""


class SpaceMismatch(GuidedGraphError):
    """A kernel's source space does not match the product of its parents' spaces."""


# --- backward / forward maps --------------------------------------------

class UnsupportedPair(GuidedGraphError):
    """No closed-form backward rule for this (kernel, h-function) combination."""


class SingularPullback(GuidedGraphError):
    """A matrix required by a closed-form rule is numerically singular."""


class SingularQ(SingularPullback):
    pass


class SingularH(SingularPullback):
    pass


class SingularC(SingularPullback):
    pass


class SingularCovariance(SingularPullback):
    pass


class ZeroDenominator(GuidedGraphError):
    """Message denominator vanished at the current state; the guided process
    is incompatible with the state it reached."""


class ZeroHVector(GuidedGraphError):
    """A discrete h vector became identically zero during filtering."""


class UnsupportedFusion(GuidedGraphError):
    """Pointwise product of these h-functions has no closed form
    (e.g. two Gamma-type h's); use backward diagonalisation instead."""


class DimMismatch(GuidedGraphError):
    """Array dimensions are inconsistent."""


# --- gamma rules ----------------------------------------------------------

class StateBeyondTarget(GuidedGraphError):
    """The chain state is at or beyond the conditioning endpoint."""


# --- continuous time ------------------------------------------------------

class PastHorizon(GuidedGraphError):
    """Requested a guided rate at or beyond the terminal time."""


class BoundExceeded(GuidedGraphError):
    """A thinning bound was violated; the refresh grid is too coarse."""


class ZeroH(GuidedGraphError):
    """The guided jump process entered a state where the terminal weighting
    function vanishes."""


# --- inference ------------------------------------------------------------

class AllWeightsZero(GuidedGraphError):
    """Every importance weight underflowed to zero."""


# --- oracles --------------------------------------------------------------

class TooLarge(GuidedGraphError):
    """Brute-force enumeration would exceed the configured path budget."""


class AcceptanceTooLow(GuidedGraphError):
    """Rejection sampling acceptance probability is below the feasibility floor."""


# --- CLI ------------------------------------------------------------------

class ConfigInvalid(GuidedGraphError):
    """A configuration file or flag combination failed validation."""
