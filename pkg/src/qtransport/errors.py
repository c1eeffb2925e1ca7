"""Exception hierarchy shared by all modules."""


class QTransportError(Exception):
    pass


class ContractError(QTransportError, ValueError):
    """Shape, dimension or basis mismatch between arguments."""


class NotApplicableError(QTransportError):
    """The requested check needs metadata the object does not carry."""


class DomainError(QTransportError, ValueError):
    pass


class DegenerateError(QTransportError):
    pass


class RealityError(QTransportError):
    """A complex wave function violates psi(-gamma) = conj(psi(gamma))."""


class InvertibilityError(QTransportError):
    """The step map is not (safely) invertible for the requested step size."""


class ConvergenceError(QTransportError):
    pass


class BudgetError(QTransportError):
    """Enumeration or dense-matrix size exceeds the configured cap."""


class NumericalError(QTransportError):
    pass


class ConsistencyError(QTransportError):
    pass
