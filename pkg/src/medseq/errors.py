"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class MedseqError(Exception):
    """Base class for all library errors."""


class ConfigError(MedseqError, ValueError):
    """Invalid configuration, schema or policy declaration."""


class DataError(MedseqError, ValueError):
    """Input data that violates the declared schema or panel invariants."""


class NumericalError(MedseqError, ArithmeticError):
    """Estimation cannot proceed (degenerate variance, no usable paths, ...)."""


class LearnerError(MedseqError, ValueError):
    """Invalid learner hyperparameters or training data."""


class SingularDesignError(LearnerError, NumericalError):
    """Unpenalized least squares on a rank-deficient design; increase the penalty."""
