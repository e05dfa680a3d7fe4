class InvalidInputError(ValueError):
    """Input violates a documented precondition (non-unit quaternion, non-orthogonal matrix, ...)."""


class NotARotationError(InvalidInputError):
    pass


class DegenerateRepresentationError(InvalidInputError):
    """Raw network output too close to a singularity of its decode map."""


class TrainingDiverged(RuntimeError):
    pass
