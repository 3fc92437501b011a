"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration (bad hyper-parameters, budgets, sizes)."""


class DomainError(ValueError):
    """A point lies outside the problem domain or violates integrality."""


class DegenerateDesignError(RuntimeError):
    """No acceptable experimental design was found within the retry cap."""


class DuplicatePointError(ValueError):
    """A point coincides with one already stored in a surrogate."""


class NotReadyError(RuntimeError):
    """The surrogate cannot be queried yet."""


class ProtocolError(RuntimeError):
    """A controller/worker/strategy message violated the protocol."""


class CheckpointError(RuntimeError):
    """A snapshot could not be loaded."""
