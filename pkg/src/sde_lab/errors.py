"""Exception types raised across the package."""


class SDELabError(Exception):
    pass


class InvalidParameterError(SDELabError, ValueError):
    pass


class AssumptionViolationError(SDELabError):
    """A coefficient field failed one of the standing checks.

    ``check`` names the failed check, ``witness`` holds the offending point(s).
    """

    def __init__(self, check, message, witness=None):
        super().__init__(f"{check}: {message}")
        self.check = check
        self.witness = witness


class InvalidLevelError(SDELabError, ValueError):
    pass


class ResourceGuardError(SDELabError, ValueError):
    pass


class ConfigurationError(SDELabError, ValueError):
    pass


class NumericalBlowupError(SDELabError, ArithmeticError):
    def __init__(self, message, step_index=None, path_index=None):
        super().__init__(message)
        self.step_index = step_index
        self.path_index = path_index


class NumericalError(SDELabError, ArithmeticError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class IncompatiblePathsError(SDELabError, ValueError):
    pass


class CouplingViolationError(SDELabError):
    pass


class DegenerateFitError(SDELabError, ValueError):
    pass
