"""Exception hierarchy shared across the pipeline.

Every error carries a ``category`` so the CLI can print a one-line,
categorized failure message.
"""


class PolyfoldError(Exception):
    category = "error"


class MalformedRecord(PolyfoldError):
    category = "parse"

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class NoProteinChains(PolyfoldError):
    category = "parse"


class ChainNotFound(PolyfoldError):
    category = "parse"


class EmptyBackbone(PolyfoldError):
    category = "structure"


class MissingConfidence(PolyfoldError):
    category = "structure"


class LengthMismatch(PolyfoldError):
    category = "shape"


class ShapeMismatch(PolyfoldError):
    category = "shape"


class TooShort(PolyfoldError):
    category = "geometry"


class EmptySequence(PolyfoldError):
    category = "alignment"


class AlignmentTooSparse(PolyfoldError):
    category = "alignment"


class ResolutionFailure(PolyfoldError):
    category = "dataset"


class BenchmarkTooSmall(PolyfoldError):
    category = "dataset"


class SchemaVersionMismatch(PolyfoldError):
    category = "io"


class IoFailure(PolyfoldError):
    category = "io"


class EmptyColumn(PolyfoldError):
    category = "model"


class NonFiniteLoss(PolyfoldError):
    category = "train"


class ZeroDenominator(PolyfoldError):
    category = "eval"


class NoValidDecoy(PolyfoldError):
    category = "eval"


class IncompleteGrid(PolyfoldError):
    category = "eval"


class SampleTooSmall(PolyfoldError):
    category = "stats"


class AllZeroDifferences(PolyfoldError):
    category = "stats"


class DegenerateSample(PolyfoldError):
    category = "stats"
