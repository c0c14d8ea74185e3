"""Small input-validation helpers shared across modules."""

import numbers

import numpy as np


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    None gives a fresh unseeded generator; ints and SeedSequences seed a new
    PCG64 generator; an existing Generator is passed through.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")


def check_spd(a, name="matrix", atol=1e-10):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(a, a.T, atol=atol, rtol=0):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return a


def check_theta(theta, p):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (p,):
        raise ValueError(f"expected a parameter vector of length {p}, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameter vector must be finite")
    return theta
