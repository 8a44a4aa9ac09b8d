"""Exception hierarchy shared by every module of the package."""


class VoiError(Exception):
    """Base class for all errors raised by :mod:`voi`."""


class NonFiniteReduction(VoiError, ArithmeticError):
    """A deterministic reduction met (or produced) a non-finite value."""


class ModelEvaluation(VoiError):
    """An economic model returned an invalid result for some parameter row."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"{message} (row {row})")
        self.row = row


class ParseError(VoiError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class DegenerateFocal(VoiError, ValueError):
    """A focal column has no variation, so no smoother can be fitted on it."""


class FocalDimension(VoiError, ValueError):
    """More focal columns than the additive smoother is configured to accept."""


class InvalidCount(VoiError, ValueError):
    pass


class DegenerateWeights(VoiError):
    """Every importance weight is zero or non-finite."""

    def __init__(self, message, q=None):
        super().__init__(message if q is None else f"{message} (nested sample q={q})")
        self.q = q


class VarianceInflation(VoiError):
    """The average posterior variance exceeds the prior INB variance."""


class UnsupportedDependence(VoiError):
    """The model's prior couples focal and non-focal parameters."""


class ConfigError(VoiError, ValueError):
    """Run configuration failed validation; ``errors`` lists every problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def with_context(exc, stage, index=None, label="q"):
    """Attach the failing stage (and loop index) to ``exc`` and return it."""
    exc.stage = stage
    setattr(exc, label, index)
    if hasattr(exc, "add_note"):
        exc.add_note(f"during {stage}" + ("" if index is None else f" ({label}={index})"))
    return exc
