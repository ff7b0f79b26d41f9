"""Shared exception types.

All derive from ValueError so callers may catch broadly; the subclasses
name the contract that was violated.
"""


class SpecfoldError(ValueError):
    """Base class for all library-specific errors."""


class DomainError(SpecfoldError):
    """Argument outside the mathematical domain of the operation."""


class ShapeError(SpecfoldError):
    """Array argument has the wrong dimension or length."""


class ResolutionError(SpecfoldError):
    """Sampling grid too coarse for the requested truncation."""


class ChartDomainError(SpecfoldError):
    """Point outside the coordinate chart being entered."""


class OrderingError(SpecfoldError):
    """Section or parameter values violate a required ordering."""


class ShootingError(SpecfoldError):
    """Special-orbit integration failed to reach its target."""


class BracketError(SpecfoldError):
    """Root-finding bracket does not contain a sign change."""


class RelaxationError(SpecfoldError):
    """Layer-flow relaxation failed to equilibrate."""


class EstimationError(SpecfoldError):
    """Not enough usable samples for the requested estimate."""


class HypothesisError(SpecfoldError):
    """A hypothesis required by a comparison check fails on the sampled box."""


class ConfigurationError(SpecfoldError):
    """Missing or inconsistent configuration values."""


class IntegrationError(SpecfoldError):
    """Integration aborted on a non-finite derivative evaluation."""


class PreconditionError(SpecfoldError):
    """Closed-form bound evaluated outside its stated hypotheses."""


class SingularRescaleError(SpecfoldError):
    """Time-rescaled field evaluated where the rescaling factor vanishes."""


class TransitionError(SpecfoldError):
    """A chart transition failed to reach its exit section."""
