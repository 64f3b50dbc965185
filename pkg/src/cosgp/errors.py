"""Exception types raised across the package."""


class CosError(Exception):
    """Base class for all package errors."""


class ConfigError(CosError):
    pass


class RegionOutsideGrid(CosError):
    pass


class DegenerateGeometry(CosError):
    pass


class MissingOutcome(CosError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing outcome for region(s): " + ", ".join(map(str, self.missing)))


class NotPSD(CosError, ArithmeticError):
    pass


class OutOfSupport(CosError, ValueError):
    pass


class AllRejected(CosError, RuntimeError):
    pass


class NonFinite(CosError, ArithmeticError):
    pass


class TooFewDraws(CosError, ValueError):
    pass


class EmptyInput(CosError, ValueError):
    pass


class TooFewSamples(CosError, ValueError):
    pass


class UnknownGroup(CosError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown group"


class EmptyCell(CosError, ValueError):
    pass


class TooFewRegions(CosError, ValueError):
    pass


class HashMismatch(CosError):
    pass


class ReplicateFailed(CosError, RuntimeError):
    """A simulation replicate failed; carries what is needed to rerun it alone."""

    def __init__(self, replicate, seed, cause):
        self.replicate = replicate
        self.seed = seed
        self.cause = cause
        super().__init__(f"replicate {replicate} (seed {seed}) failed: {type(cause).__name__}: {cause}")

    def __reduce__(self):
        return (type(self), (self.replicate, self.seed, self.cause))
