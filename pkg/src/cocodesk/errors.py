"""Exception hierarchy.

Everything a caller can fix by changing inputs derives from ``ValidationError``;
the CLI maps those to exit status 1 and anything else to 2.
"""


class CocoDeskError(Exception):
    pass


class ValidationError(CocoDeskError, ValueError):
    pass


class ZeroNorm(ValidationError):
    pass


class DimMismatch(ValidationError):
    pass


class InvalidK(ValidationError):
    pass


class UnusableCentroid(ValidationError):
    pass


class NonFinite(CocoDeskError, ArithmeticError):
    pass


class Diverged(CocoDeskError, ArithmeticError):
    pass


class InsufficientData(ValidationError):
    pass


class MissingMate(ValidationError):
    pass


class DegenerateLabels(ValidationError):
    pass


class AllRegionsMissing(ValidationError):
    pass


class DegenerateGeometry(ValidationError):
    pass


class BadMagic(ValidationError):
    pass


class TruncatedFile(ValidationError):
    pass


class CountMismatch(ValidationError):
    pass
