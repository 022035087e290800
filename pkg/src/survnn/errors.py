"""Exception types shared across the package."""


class SurvnnError(Exception):
    """Base class for all survnn errors."""


class ShapeError(SurvnnError, ValueError):
    """Array dimensions do not match the declared network/data layout."""


class DomainError(SurvnnError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class ConfigError(SurvnnError, ValueError):
    """Invalid configuration (grids, fractions, experiment spec, schema)."""


class DataError(SurvnnError, ValueError):
    """Input data violate a precondition (empty parts, missing events, bad CSV)."""


class DegenerateDataError(DataError):
    """Data cannot support the requested estimate (e.g. all subjects censored)."""


class OptimizationError(SurvnnError, RuntimeError):
    """Training or maximum-likelihood iteration failed (divergence, non-finite loss)."""


class EstimationError(SurvnnError, RuntimeError):
    """A classical estimator did not converge or its linear system is singular."""


class PerfectSeparationError(EstimationError):
    """Monotone partial likelihood: a coefficient runs to infinity."""


class DegenerateTestError(SurvnnError, RuntimeError):
    """A test statistic's variance estimate is zero or too few events exist."""


class MetricUndefinedError(SurvnnError, ValueError):
    """A summary metric is undefined for the given data (e.g. no events)."""


class CalibrationError(SurvnnError, RuntimeError):
    """Censoring-rate calibration could not bracket the target rate."""


class SchemaError(SurvnnError, ValueError):
    """CSV column roles or categorical levels do not match the declared schema."""
