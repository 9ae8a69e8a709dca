"""Exception types shared across the package."""


class CsbplabError(Exception):
    """Base class for all package errors."""


class MechanismError(CsbplabError):
    """Invalid branching-mechanism definition."""


class QuadratureError(CsbplabError):
    """A numerical integral failed to converge.

    Carries the offending object (usually a Levy-measure component) so the
    caller can report which piece of the mechanism is at fault.
    """

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class FlowDomainError(CsbplabError):
    """Backward-flow evaluation outside the admissible interval (kappa(t), v(t))."""

    def __init__(self, message, kappa_t=None, v_t=None):
        super().__init__(message)
        self.kappa_t = kappa_t
        self.v_t = v_t


class UnsupportedMechanismError(CsbplabError):
    """Operation not defined for this class of mechanism."""


class AbsorbedStateError(CsbplabError):
    """Frequency requested for a population with total mass 0 or infinity."""


class ContractError(CsbplabError):
    """A documented precondition was violated."""


class UndecidableError(CsbplabError):
    """A classification predicate could not be decided."""
