"""Input validation helpers shared by the public functions and estimators."""

import numbers

import numpy as np


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        if isinstance(value, numbers.Real) and float(value).is_integer():
            value = int(value)
        else:
            raise TypeError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_real(value, name, *, low=None, high=None, low_open=False, high_open=False):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise TypeError(f"{name} must be a real number, got {value!r}") from None
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if low is not None and (value < low or (low_open and value == low)):
        raise ValueError(f"{name} must be {'>' if low_open else '>='} {low}, got {value}")
    if high is not None and (value > high or (high_open and value == high)):
        raise ValueError(f"{name} must be {'<' if high_open else '<='} {high}, got {value}")
    return value


def check_unit_vectors(x, name="x", atol=1e-9):
    """Return ``x`` as a float array whose last axis holds unit vectors."""
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] < 2:
        raise ValueError(f"{name} must be a vector or a 2-D array of vectors of length >= 2")
    norms = np.linalg.norm(x, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= atol):
        raise ValueError(f"{name} must have unit Euclidean norm (tolerance {atol})")
    return x


def check_probability_vector(w, name="w", atol=1e-12):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-D array")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError(f"{name} must be finite and nonnegative")
    if abs(w.sum() - 1.0) > atol:
        raise ValueError(f"{name} must sum to 1 (got {w.sum()!r})")
    return w


def check_distance_matrix(D, name="D", atol=1e-9):
    """Validate a finite (pseudo-)metric given as a square matrix."""
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1] or D.shape[0] == 0:
        raise ValueError(f"{name} must be a nonempty square matrix")
    if not np.all(np.isfinite(D)) or np.any(D < 0):
        raise ValueError(f"{name} must be finite and nonnegative")
    if not np.allclose(D, D.T, rtol=0, atol=atol):
        raise ValueError(f"{name} must be symmetric")
    if np.any(np.abs(np.diag(D)) > atol):
        raise ValueError(f"{name} must have a zero diagonal")
    # D[i, j] <= D[i, k] + D[k, j] for all i, j, k
    via = (D[:, :, None] + D[None, :, :]).min(axis=1)
    if np.any(D - via > atol):
        raise ValueError(f"{name} violates the triangle inequality")
    return D


def check_symmetric(M, name="matrix", atol=1e-12):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(M, M.T, rtol=0, atol=atol):
        raise ValueError(f"{name} must be symmetric")
    return M
