"""Exception hierarchy.

Data problems (bad files, mismatched dimensions, undersized pools) derive from
:class:`DataError`; numerical breakdowns derive from :class:`NumericError`.
The CLI maps the two families to distinct exit codes.
"""


class HGOEError(Exception):
    pass


class DataError(HGOEError):
    pass


class IngestionError(DataError):
    pass


class FormatError(DataError):
    pass


class DimensionError(DataError):
    pass


class SplitError(DataError):
    pass


class AssemblyError(DataError):
    pass


class PoolError(DataError):
    pass


class ClusteringError(DataError):
    pass


class EstimationError(DataError):
    pass


class SizeError(DataError):
    pass


class SynthesisError(DataError):
    pass


class AlignmentError(DataError):
    pass


class MetricError(DataError):
    pass


class NumericError(HGOEError):
    pass


class DomainError(NumericError, ValueError):
    pass


class TrainingError(NumericError):
    pass
