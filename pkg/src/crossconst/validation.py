"""Input-validation helpers shared across the package.

Small, sklearn-flavored checks: validate early, raise ``ValueError`` /
``TypeError`` with the offending name in the message.
"""

from __future__ import annotations

import numpy as np


class ConfigError(ValueError):
    """A configuration value violates a precondition."""


class DataError(ValueError):
    """Input data violates a contract (malformed pair, overlong sequence, ...)."""


def check_scalar(value, name: str, *, minimum=None, maximum=None,
                 include_min: bool = True, include_max: bool = True) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
        raise TypeError(f"{name} must be a number, got {type(value).__name__}")
    v = float(value)
    if minimum is not None:
        if include_min and v < minimum:
            raise ConfigError(f"{name} must be >= {minimum}, got {value}")
        if not include_min and v <= minimum:
            raise ConfigError(f"{name} must be > {minimum}, got {value}")
    if maximum is not None:
        if include_max and v > maximum:
            raise ConfigError(f"{name} must be <= {maximum}, got {value}")
        if not include_max and v >= maximum:
            raise ConfigError(f"{name} must be < {maximum}, got {value}")
    return v


def check_int(value, name: str, *, minimum=None, maximum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    check_scalar(int(value), name, minimum=minimum, maximum=maximum)
    return int(value)


def check_random_state(seed) -> np.random.Generator:
    """Accept a seed or an existing Generator, return a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng(check_int(seed, "seed", minimum=0))


def check_stochastic_rows(table: np.ndarray, name: str, tol: float = 1e-12) -> np.ndarray:
    """Every row of the trailing axis must be a probability distribution."""
    table = np.asarray(table, dtype=np.float64)
    if np.any(table < 0):
        raise ValueError(f"{name} contains negative probabilities")
    sums = table.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=tol, rtol=0):
        worst = float(np.abs(sums - 1.0).max())
        raise ValueError(f"{name} rows must sum to 1 (max deviation {worst:.3g})")
    return table


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
