"""Exception hierarchy shared by the library and the command line runner."""


class MsieveError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 3

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


class InputError(MsieveError, ValueError):
    exit_code = 2


class ConfigError(MsieveError, ValueError):
    exit_code = 2


class NumericError(MsieveError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index

    def to_dict(self):
        d = super().to_dict()
        if self.index is not None:
            d["index"] = int(self.index)
        return d


class QuadratureError(NumericError):
    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error

    def to_dict(self):
        d = super().to_dict()
        d["estimate"] = self.estimate
        d["error_estimate"] = self.error
        return d


class FitError(NumericError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []

    def to_dict(self):
        d = super().to_dict()
        d["diagnostics"] = self.diagnostics
        return d


class SelectionError(NumericError):
    pass


class CalibrationError(NumericError):
    pass


class DiscretizationError(NumericError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class ConstructionError(NumericError):
    pass


class SamplingError(NumericError):
    pass


class RiskError(NumericError):
    pass


class AuditFailure(MsieveError):
    """An audit ran to completion and found a violated inequality."""

    exit_code = 4

    def __init__(self, message, files=(), extra=None):
        super().__init__(message)
        self.files = list(files)
        self.extra = extra or {}
