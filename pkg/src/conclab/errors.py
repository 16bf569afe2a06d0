"""Exception taxonomy shared by all conclab modules."""


class ConclabError(Exception):
    """Base class for all conclab errors."""


class NotSPD(ConclabError):
    """A metric evaluation produced a non symmetric-positive-definite matrix."""


class IntegrationFailure(ConclabError):
    """The adaptive geodesic integrator could not meet its tolerance."""


class DomainEscape(ConclabError):
    """A geodesic left the declared coordinate domain of the manifold."""


class OutsideInjectivity(ConclabError):
    """A logarithm target lies at or beyond the declared injectivity radius."""


class NoConvergence(ConclabError):
    """Newton shooting for the logarithm map failed to converge."""


class Disconnected(ConclabError):
    """No path between two points on the discretization graph."""


class RegionTooFine(ConclabError):
    """Candidate lattice too coarse relative to epsilon (config error)."""


class NotInDiscretization(ConclabError):
    """A requested core-sequence point is not a discretization point."""


class LatticeMismatch(ConclabError):
    """Two grid objects do not share the same lattice."""


class UnsupportedExponent(ConclabError):
    """L^p exponent outside the admissible range for this dimension."""


class IncompatibleProfiles(ConclabError):
    """Local profiles disagree on chart overlaps beyond tolerance."""


class CoveringGap(ConclabError):
    """A test point received zero total partition-of-unity weight."""


class NoConvergedPairs(ConclabError):
    """No transition-map pair converged; the gluing scenario is ill-posed."""


class NotCauchy(ConclabError):
    """A limiting procedure failed the Cauchy criterion on the schedule."""


class IncompatibleProfile(ConclabError):
    """A profile does not match the chart structure of the atlas."""


class ParseError(ConclabError):
    """Scenario configuration file is malformed."""


class ConstraintViolation(ConclabError):
    """Scenario configuration violates a structural constraint."""
