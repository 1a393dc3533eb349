"""Exception hierarchy shared across the package."""


class AdaPromptError(Exception):
    """Base class for every error raised by this package."""

    code = "adaprompt_error"


# verbalizer
class EmptyDecomposition(AdaPromptError):
    code = "empty_decomposition"


class DuplicateWordSet(AdaPromptError):
    code = "duplicate_word_set"


class DuplicateLabel(AdaPromptError):
    code = "duplicate_label"


class UnresolvableWord(AdaPromptError):
    code = "unresolvable_word"


class SchemaError(AdaPromptError):
    code = "schema_error"


# prompt rendering
class TemplateOverflow(AdaPromptError):
    code = "template_overflow"


class SpanLost(AdaPromptError):
    code = "span_lost"


class InvalidExample(AdaPromptError):
    code = "invalid_example"


# scoring / objectives
class DimensionMismatch(AdaPromptError):
    code = "dimension_mismatch"


class PositionNotMasked(AdaPromptError):
    code = "position_not_masked"


class DegenerateDistribution(AdaPromptError):
    code = "degenerate_distribution"


class EmptyBatch(AdaPromptError):
    code = "empty_batch"


# backend
class LengthExceeded(AdaPromptError):
    code = "length_exceeded"


class VocabOverflow(AdaPromptError):
    code = "vocab_overflow"


class NonFiniteLoss(AdaPromptError):
    code = "non_finite_loss"


class UnknownBackend(AdaPromptError):
    code = "unknown_backend"


# harness
class InsufficientClassInstances(AdaPromptError):
    code = "insufficient_class_instances"


class AllPointsFailed(AdaPromptError):
    code = "all_points_failed"


class LengthMismatch(AdaPromptError):
    code = "length_mismatch"


class DataFormatError(AdaPromptError):
    code = "data_format_error"


class ConfigError(AdaPromptError):
    code = "config_error"
