class ModelError(ValueError):
    """Raised for malformed models, factor lists or model files."""


class DegenerateMessageError(ArithmeticError):
    """A recomputed message summed to zero or a non-finite value."""
