"""Exception hierarchy.

Every error carries a short ``kind`` string so the CLI and reports can name
the failure without parsing messages.
"""


class DRBenchError(Exception):
    kind = "error"


class DataError(DRBenchError):
    kind = "data-error"

    def __init__(self, message, sample_id=None):
        if sample_id is not None:
            message = f"{message} (sample {sample_id!r})"
        super().__init__(message)
        self.sample_id = sample_id


class MissingMaskFile(DataError):
    """A file required by the dataset layout is absent."""

    kind = "missing-mask-file"


class DimensionMismatch(DataError):
    kind = "dimension-mismatch"


class UnknownLesionKind(DataError):
    kind = "unknown-lesion-kind"


class GradeOutOfRange(DataError):
    kind = "grade-out-of-range"


class EmptyDataset(DataError):
    kind = "empty-dataset"


class MissingLabels(DataError):
    kind = "missing-labels"


class TooFewSamples(DataError):
    kind = "too-few-samples"


class LesionOverflow(DataError):
    kind = "lesion-overflow"


class InvalidSpec(DRBenchError, ValueError):
    kind = "invalid-config"


class MetricError(DRBenchError, ValueError):
    kind = "metric-error"


class ShapeMismatch(MetricError):
    kind = "shape-mismatch"


class ScaleMismatch(ShapeMismatch):
    kind = "scale-mismatch"


class LengthMismatch(MetricError):
    kind = "length-mismatch"


class ValueOutOfRange(MetricError):
    kind = "value-out-of-range"


class DegenerateLabels(MetricError):
    kind = "degenerate-labels"


class UnsupportedArchitecture(DRBenchError):
    kind = "unsupported-architecture"


class MissingDomainTag(DRBenchError, ValueError):
    kind = "missing-domain-tag"


class NonFiniteTerm(DRBenchError, ValueError):
    kind = "non-finite-term"


class ConfigError(DRBenchError):
    """Invalid experiment configuration, anchored to a file and line when known."""

    kind = "config-invalid"

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class IncompatibleReports(DRBenchError):
    kind = "incompatible-report-kinds"
