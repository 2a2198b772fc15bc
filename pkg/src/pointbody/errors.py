"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes or lengths violate an operation's precondition."""


class ArgumentError(ValueError):
    """An argument value is outside its documented domain."""


class ContractError(ValueError):
    """A numerical invariant (e.g. weights summing to one) is violated."""


class EmptySurfaceError(RuntimeError):
    """An isosurface extraction found no zero crossing on the grid."""


class CandidateLookupError(RuntimeError):
    """A spatial lookup had no candidates to search."""


class TrainingError(RuntimeError):
    """Training produced a non-finite quantity; message names the culprit."""


class ConfigError(ValueError):
    """Bad key, missing key, or out-of-range value in a config file."""
