"""Exception hierarchy shared by every node."""


class NeuralSceneError(Exception):
    """Base class for all errors raised by the pipeline."""


class SceneValidationError(NeuralSceneError, ValueError):
    """Input violates a documented precondition or type invariant."""


class DegenerateInputError(SceneValidationError):
    """Geometric input has no well-defined answer (zero norm, parallel vectors)."""


class MarchingError(NeuralSceneError):
    """Samples cannot be allocated along a ray."""


class TapeError(NeuralSceneError):
    """Misuse of the autodiff tape (non-scalar loss, foreign node)."""


class CheckpointFormatError(NeuralSceneError):
    """Checkpoint bytes do not follow the declared layout."""


class DatasetFormatError(NeuralSceneError):
    """Dataset directory or text file does not follow the documented schema."""


class TrainingDivergedError(NeuralSceneError):
    """Loss became non-finite or ran away during optimization."""


class CliValidationError(SceneValidationError):
    """Command-line flags failed validation before any side effect."""
