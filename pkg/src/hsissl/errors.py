"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, malformed scene/label/checkpoint files with 3, and numerical
failures (divergence, NaN gradients, generation dead ends) with 4.
"""


class HsisslError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HsisslError):
    """Invalid or inconsistent user-supplied configuration."""


class DimensionError(HsisslError):
    """Tensor shapes incompatible with the requested operation."""


class DegenerateBatchError(DimensionError):
    """Batch too small for batch statistics (size 1 in training mode)."""


class LabelError(HsisslError):
    """Class label outside the valid range."""


class DataFormatError(HsisslError):
    """Scene, label map, or checkpoint file does not match its format."""


class ConsistencyError(DataFormatError):
    """Paired files disagree (e.g. label map dimensions vs. scene)."""


class SplitError(HsisslError):
    """A few-shot split cannot be drawn from the given label map."""


class GenerationError(HsisslError):
    """Synthetic scene generation failed to satisfy its constraints."""


class NumericalError(HsisslError):
    """Non-finite values or divergence encountered during optimization."""
