"""Exception types shared across seplab."""


class SeplabError(Exception):
    """Base class for all seplab errors."""


class ConfigError(SeplabError, ValueError):
    """A configuration violates a documented constraint."""


class InvalidInputError(SeplabError, ValueError):
    """Input data does not satisfy an operation's preconditions."""


class InvariantError(SeplabError, RuntimeError):
    """An internal shape or bookkeeping invariant was violated."""


class InfeasibleSceneError(SeplabError, RuntimeError):
    """A sampled room cannot realise the requested reverberation time."""


class TrainingError(SeplabError, RuntimeError):
    """Training hit a non-recoverable numerical condition."""
