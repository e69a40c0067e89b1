"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown config key."""


class ParseError(ValueError):
    """Malformed input file; message carries the offending line number."""


class EncodingError(ValueError):
    """A feature id fell outside its declared vocabulary."""


class MetricUndefinedError(ValueError):
    """Metric is undefined for the given inputs (e.g. single-class AUC)."""


class NotConvergedError(RuntimeError):
    """Training finished without the epoch loss improving; see diagnostic."""


class GroundTruthRequiredError(RuntimeError):
    """Exposure simulation needs synthetic ground truth; real logs lack it."""
