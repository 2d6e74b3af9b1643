"""Domain errors raised across the toolkit.

Every error the library raises deliberately derives from ``DtestError`` so
the CLI can map failures to exit codes without enumerating modules.
"""


class DtestError(Exception):
    """Base class for all errors raised by this package on purpose."""


class NonFiniteInput(DtestError):
    """A matrix or trace contains NaN or infinite entries."""


class EmptySet(DtestError):
    """An operation received an input set with no rows."""


class SetTooSmall(DtestError):
    """The multiset has fewer elements than the metric requires."""


class CompressorFailure(DtestError):
    """The requested compressor is unknown, unavailable, or failed to run."""


class EmptyTrace(DtestError):
    """A coverage criterion received an activation trace with no inputs."""


class KTooLarge(DtestError):
    """Top-k parameter exceeds the width of the narrowest layer."""


class EmptyClassTrainingSet(DtestError):
    """A predicted class has no training activations to compare against."""


class ProfileMismatch(DtestError):
    """Activation profile does not cover the layers/neurons of the trace."""


class NotMispredicted(DtestError):
    """Feature augmentation saw a row that was predicted correctly."""


class DimsTooLarge(DtestError):
    """Requested embedding dimensionality exceeds the feature count."""


class TooFewPoints(DtestError):
    """Clustering needs at least ``min_cluster_size`` points."""


class SingleCluster(DtestError):
    """Cluster quality indices need at least two non-noise clusters."""


class LengthMismatch(DtestError):
    """Paired samples have different lengths (or too few entries)."""


class ZeroVariance(DtestError):
    """Correlation is undefined because one side is entirely tied."""


class TooFewPairs(DtestError):
    """Too few non-zero paired differences for the signed-rank test."""


class SpecInvalid(DtestError):
    """An experiment specification fails its own invariants."""


class ClassTooSmall(DtestError):
    """A class does not hold enough members for the requested sample size."""


class MalformedFile(DtestError):
    """A data file failed structural validation.

    Carries optional ``path``, ``offset`` (bytes) and ``line`` (1-based)
    attributes pointing at the first defect.
    """

    def __init__(self, message, *, path=None, offset=None, line=None):
        self.path = path
        self.offset = offset
        self.line = line
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
