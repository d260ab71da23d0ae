"""Exception hierarchy shared across the harness."""


class CrossviewEvalError(Exception):
    """Base class for all harness errors."""


class ManifestError(CrossviewEvalError):
    """Manifest file is missing, malformed, or violates an invariant."""


class SplitError(CrossviewEvalError):
    """Stratified split preconditions not met."""


class ShapeMismatchError(CrossviewEvalError):
    """Operands have incompatible shapes or dimensions."""


class NumericalError(CrossviewEvalError):
    """An intermediate value is non-finite or indefinite beyond tolerance."""


class FeatureFileError(CrossviewEvalError):
    """A feature file is truncated, mislabeled, or inconsistent."""


class LabelFileError(CrossviewEvalError):
    """A predicted-label CSV violates the documented schema."""


class ConfigError(CrossviewEvalError):
    """Run configuration is invalid (exit code 1 from the CLI)."""
