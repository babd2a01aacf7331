"""
Error hierarchy for the spotter.

Every failure raised by this package derives from SpotterError so the CLI can
report it and exit cleanly.
"""

from typing import Optional, Sequence, Tuple


class SpotterError(Exception):
    """Base class for all spotter failures"""


class DomainError(SpotterError, ValueError):
    """Argument outside the domain of an operation"""


class ShapeError(SpotterError, ValueError):
    """Operand shapes incompatible with an operation"""

    def __init__(self, op: str, shapes: Sequence[Tuple[int, ...]], detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        message = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class TapeError(SpotterError):
    """Misuse of a gradient tape"""


class NonFiniteError(SpotterError, FloatingPointError):
    """NaN or Inf produced by a forward op while debug checks are enabled"""

    def __init__(self, op: str, shape: Tuple[int, ...]):
        self.op = op
        self.shape = tuple(shape)
        super().__init__(f"{op}: non-finite values in output of shape {self.shape}")


class ConfigError(SpotterError, ValueError):
    """Invalid configuration value"""


class AnnotationError(SpotterError, ValueError):
    """Malformed annotation record"""

    def __init__(self, message: str, record: Optional[int] = None, field: Optional[str] = None):
        self.record = record
        self.field = field
        self.detail = message
        prefix = ""
        if record is not None:
            prefix += f"record {record}"
        if field:
            prefix += f"{', ' if prefix else ''}field '{field}'"
        super().__init__(f"{prefix}: {message}" if prefix else message)


class CTCInfeasibleError(SpotterError):
    """Label needs more alignment steps than are available"""

    def __init__(self, required: int, available: int):
        self.required = required
        self.available = available
        super().__init__(f"CTC label needs {required} steps but only {available} available")


class MatchingError(SpotterError):
    """Bipartite matching cannot be performed"""


class CheckpointError(SpotterError):
    """Checkpoint missing, corrupt, or incompatible with the model"""


class SceneGenerationError(SpotterError):
    """Synthetic scene could not be produced within the retry budget"""


class DataError(SpotterError):
    """Invalid dataset access"""


class TrainingDivergedError(SpotterError):
    """Loss became non-finite during training"""

    def __init__(self, step: int, dump_path: str):
        self.step = step
        self.dump_path = dump_path
        super().__init__(f"non-finite loss at step {step}; diagnostic dump written to {dump_path}")
