"""Exception types raised by the simulation engine."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class UnsupportedError(InvalidInputError):
    """The request is well-formed but outside what the engine supports."""


class DegenerateInputError(ValueError):
    """Data that makes a fit undefined, e.g. a zero MSE under a log."""


class ConfigError(ValueError):
    """A configuration file or CLI override could not be used."""


class NumericOverflowError(ArithmeticError):
    """A coefficient or particle state became non-finite.

    The attributes locate the failure; any of them may be ``None`` when
    the context is unknown at the raising site.
    """

    def __init__(self, message, *, coefficient=None, step=None, particle=None,
                 level=None, repetition=None):
        super().__init__(message)
        self.coefficient = coefficient
        self.step = step
        self.particle = particle
        self.level = level
        self.repetition = repetition

    def with_context(self, **kwargs):
        for key, value in kwargs.items():
            setattr(self, key, value)
        return self

    def __str__(self):
        parts = [super().__str__()]
        for name in ("coefficient", "level", "repetition", "step", "particle"):
            value = getattr(self, name)
            if value is not None:
                parts.append(f"{name}={value}")
        return " ".join(parts)
