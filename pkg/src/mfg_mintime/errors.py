"""Exception types shared across the package."""


class MFGError(Exception):
    """Base class for all package errors."""


class DomainError(MFGError):
    """Invalid or degenerate movement domain."""


class EmptyTargetError(DomainError):
    """The target set rasterizes to no grid cells."""


class DegenerateShapeError(DomainError):
    """The shape rasterizes to no interior cells."""


class DisconnectedDomainError(DomainError):
    """No grid path connects two cells that should be connected."""


class OutOfBandError(DomainError):
    """Query point lies outside the stored distance band."""


class UndefinedNormalError(DomainError):
    """Normal requested outside the tubular band around the boundary."""


class ProjectionError(DomainError):
    """Projection onto the closed domain failed to land inside."""


class NegativeDensityError(MFGError):
    """A density grid contains negative entries."""


class CFLViolationError(MFGError):
    """Time step too large for the grid spacing and speed bound."""


class UnreachableTargetError(MFGError):
    """Some domain cell cannot reach the target set."""


class AmbiguousGradientError(MFGError):
    """The set of maximal-descent directions is not a tight cluster."""


class NotStoppedError(MFGError):
    """Operation requires a trajectory that reached the target."""


class DegenerateCertificateError(MFGError):
    """Costate reconstruction impossible (zero speed at arrival)."""


class MassMismatchError(MFGError):
    """Two measures passed to a transport computation have unequal mass."""


class EmptySupportError(MFGError):
    """Initial-measure specification has no mass inside the domain."""


class BankSupportError(MFGError):
    """A test function touches the target buffer or the initial time."""


class ConfigError(MFGError):
    """Scenario configuration is invalid; carries the full error list."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(str(p) for p in self.problems))
