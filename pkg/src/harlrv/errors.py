"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the CLI can map it without a lookup
table: 2 for bad input data or specifications, 3 for numerical failures.
"""


class HarError(Exception):
    exit_code = 3


class DataError(HarError):
    exit_code = 2


class NumericalError(HarError):
    exit_code = 3


class InvalidSpec(DataError):
    pass


class MissingContext(DataError):
    pass


class UnsupportedKernel(DataError):
    pass


class NonPsdKernel(UnsupportedKernel):
    pass


class OutOfRange(DataError):
    pass


class BreakPoint(DataError):
    pass


class TooLarge(DataError):
    pass


class TooFewDraws(DataError):
    pass


class BandwidthTooLarge(DataError):
    pass


class RankDeficient(NumericalError):
    pass


class DegenerateBandwidth(NumericalError):
    pass


class DegenerateCurve(NumericalError):
    pass


class DegenerateVariance(NumericalError):
    pass


class SingularMiddleMatrix(NumericalError):
    pass


class ExperimentError(NumericalError):
    pass
