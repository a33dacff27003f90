"""Input validation helpers shared across modules."""

import numbers

import numpy as np


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


def as_generator(rng=None):
    """Coerce ``None``, an int seed, a ``SeedSequence`` or a ``Generator`` to a ``Generator``."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(rng)
    raise ValidationError(f"cannot use {rng!r} as a random source")


def check_probability(value, name):
    if not (0.0 <= float(value) <= 1.0):
        raise ValidationError(f"{name} must be a probability in [0, 1], got {value!r}")
    return float(value)


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        if isinstance(value, numbers.Real) and float(value).is_integer():
            value = int(value)
        else:
            raise ValidationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)
