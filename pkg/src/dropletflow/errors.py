"""Exception types shared across the package."""


class DropletFlowError(Exception):
    pass


class DimensionError(DropletFlowError, ValueError):
    pass


class SingularPointError(DropletFlowError, ValueError):
    pass


class ResolutionError(DropletFlowError, ValueError):
    pass


class AdmissibilityError(DropletFlowError, ValueError):
    """Contact-angle data or shape parameters violate the admissibility bound."""


class CalibrationError(DropletFlowError, ValueError):
    pass


class DegenerateSetError(DropletFlowError, ValueError):
    pass


class GridMismatchError(DropletFlowError, ValueError):
    pass


class CapacityScaleError(DropletFlowError, OverflowError):
    pass


class TruncationError(DropletFlowError, RuntimeError):
    pass


class TopologyError(DropletFlowError, RuntimeError):
    pass


class SetupError(DropletFlowError, ValueError):
    """Precondition of a verification check is not met."""


class ConfigError(DropletFlowError, ValueError):
    pass
