"""Exception hierarchy. Everything the library raises on purpose derives from
FuselabError so the CLI can map failures to a single exit code."""


class FuselabError(Exception):
    """Base class for all errors raised by fuselab."""


class DimensionError(FuselabError):
    """Operand shapes do not conform; the message names both shapes."""


class DomainError(FuselabError):
    """A scalar argument is outside its valid domain (negative gamma, d_k = 0, ...)."""


class InputError(FuselabError):
    """Structurally invalid input: empty dataset, mismatched lengths, bad class id."""


class FormatError(FuselabError):
    """An on-disk artifact violates its binary format."""


class UnsupportedVersionError(FormatError):
    """File declares a format version this build does not read."""


class IntegrityError(FuselabError):
    """Dataset-level consistency violation, e.g. duplicate record ids."""


class ConfigError(FuselabError):
    """A TrainConfig field violates its invariant."""


class EvaluationError(FuselabError):
    """A function handed to the gradient checker produced a non-finite value."""


class DivergenceError(FuselabError):
    """Training loss became non-finite."""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
