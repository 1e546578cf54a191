"""Exception taxonomy shared across the toolkit.

Every error raised on purpose derives from FsmnChainError so the CLI can
catch one type and map it to a single-line diagnostic with exit status 1.
"""


class FsmnChainError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(FsmnChainError):
    """Invalid configuration or mismatched operand shapes."""


class FormatError(FsmnChainError):
    """Malformed serialized data (bad magic, truncated payload, bad header)."""


class GraphError(FsmnChainError):
    """Structural problem with a sequence graph."""


class EmptyGraphError(GraphError):
    """Trimming removed every state: the graph accepts nothing."""


class InfeasibleGraphError(GraphError):
    """No complete path of the requested length exists."""


class NumeratorInfeasibleError(InfeasibleGraphError):
    """The reference transcript cannot be aligned to the utterance.

    Signals the trainer to skip the utterance rather than abort the run.
    """


class TooManyPathsError(GraphError):
    """Exhaustive path enumeration exceeded its limit; shrink the test case."""


class TrainingDivergedError(FsmnChainError):
    """A loss value became non-finite during optimization."""
