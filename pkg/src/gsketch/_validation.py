"""Input validation helpers shared by the public modules."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ConfigError, NumericalError


def check_matrix(A, name="A", allow_empty=False):
    """Return ``A`` as a finite 2-D float64 array."""
    try:
        A = check_array(
            A,
            dtype=np.float64,
            ensure_2d=True,
            ensure_min_samples=0 if allow_empty else 1,
            ensure_min_features=0 if allow_empty else 1,
        )
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    return A


def check_vector(v, n=None, name="v"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ConfigError(f"{name} must be one-dimensional, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise ConfigError(f"{name} has length {v.shape[0]}, expected {n}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"{name} contains non-finite values")
    return v


def check_square_symmetric(K, name="K", rtol=1e-12):
    K = check_matrix(K, name)
    if K.shape[0] != K.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {K.shape}")
    scale = np.abs(K).max(initial=0.0)
    if np.abs(K - K.T).max(initial=0.0) > rtol * max(scale, np.finfo(float).tiny):
        raise ConfigError(f"{name} is not symmetric")
    return K


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_real(value, name, minimum=None, strict=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ConfigError(f"{name} must be finite")
    if minimum is not None:
        if strict and value <= minimum:
            raise ConfigError(f"{name} must be > {minimum}, got {value}")
        if not strict and value < minimum:
            raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


def psd_spectrum(K, indefinite_tol=1e-6):
    """Eigen-decompose a symmetric matrix, descending, failing on material indefiniteness."""
    evals, evecs = np.linalg.eigh(K)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    top = evals[0] if evals.size else 0.0
    if evals.size and evals[-1] < -indefinite_tol * max(abs(top), np.finfo(float).tiny):
        raise NumericalError(
            f"covariance is materially indefinite: min eigenvalue {evals[-1]:.3e}, "
            f"max {top:.3e}"
        )
    return evals, evecs
