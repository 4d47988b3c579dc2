"""Exception types raised across the package.

Every error derives from :class:`LiqError`; most also derive from
``ValueError`` so callers that only care about bad input can catch that.
"""


class LiqError(Exception):
    """Base class for all package errors."""


# cpt
class TooFewRecords(LiqError, ValueError):
    pass


class NonFiniteInput(LiqError, ValueError):
    pass


class IntervalNonPositive(LiqError, ValueError):
    pass


class SeriesTooShort(LiqError, ValueError):
    pass


# mechanics
class NonConvergence(LiqError, RuntimeError):
    pass


class NonPositiveStress(LiqError, ValueError):
    pass


# indices / statistics
class EmptyProfile(LiqError, ValueError):
    pass


class Empty(LiqError, ValueError):
    pass


class TooFew(LiqError, ValueError):
    pass


class ZeroVariance(LiqError, ValueError):
    pass


class ConstantField(LiqError, ValueError):
    pass


class ConstantObserved(LiqError, ValueError):
    pass


# curves
class TooFewSamples(LiqError, ValueError):
    pass


class DegenerateFit(LiqError, RuntimeError):
    pass


# surrogate
class NoValidSample(LiqError, ValueError):
    pass


class SchemaMissingGwt(LiqError, KeyError):
    pass


class TooFewRows(LiqError, ValueError):
    pass


class EmptyGrid(LiqError, ValueError):
    pass


class SchemaMismatch(LiqError, ValueError):
    pass


class ModelFormatError(LiqError, ValueError):
    pass


# geostat
class TooFewStations(LiqError, ValueError):
    pass


class TooFewBins(LiqError, ValueError):
    pass


class FitNonConvergence(LiqError, RuntimeError):
    pass


class SingularSystem(LiqError, RuntimeError):
    pass


class NonPositiveSill(LiqError, ValueError):
    pass


class CrsMismatch(LiqError, ValueError):
    pass


# raster
class BadMagic(LiqError, ValueError):
    pass


class TruncatedFile(LiqError, ValueError):
    pass


class HeaderInconsistent(LiqError, ValueError):
    pass


class MalformedHeader(LiqError, ValueError):
    pass


class RaggedRows(LiqError, ValueError):
    pass


class GridMismatch(LiqError, ValueError):
    pass


# forward
class MalformedXml(LiqError, ValueError):
    pass


class MissingPgaField(LiqError, KeyError):
    pass


class DimensionMismatch(LiqError, ValueError):
    pass


class NoOverlap(LiqError, ValueError):
    pass


class KindMismatch(LiqError, ValueError):
    pass


class ConfigError(LiqError, ValueError):
    pass


class StageError(LiqError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
