"""Exception types raised across the pipeline."""


class FiresenseError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class GenerationExhausted(FiresenseError):
    pass


class DomainError(FiresenseError, ValueError):
    pass


class SingularSystem(FiresenseError):
    """Stiffness matrix is not positive definite."""


class ShapeMismatch(FiresenseError, ValueError):
    pass


class NonFiniteError(FiresenseError, FloatingPointError):
    """A NaN or Inf appeared in a tensor at creation time."""


class NonFiniteLoss(FiresenseError):
    pass


class LayerOverflow(FiresenseError):
    pass


class DataEmpty(FiresenseError):
    pass


class FrozenAgentViolated(FiresenseError):
    pass


class DegenerateInput(FiresenseError, ValueError):
    pass


class KeyMismatch(FiresenseError, KeyError):
    pass


class OutOfBox(FiresenseError):
    pass
