"""Small dense linear-algebra kernel shared by the rest of the package.

Matrices are plain float64 numpy arrays.  Random streams are
``numpy.random.Generator`` instances; use :func:`trial_rng` to derive an
independent, reproducible stream per (master seed, trial index).
"""
import numpy as np
from scipy.linalg.blas import dtrmv
from scipy.linalg.lapack import dtrtrs

EPS = 2.0 ** -52


class DimensionError(ValueError):
    pass


class SingularFactorError(ValueError):
    pass


def trial_rng(master_seed, *path):
    """Generator for the stream identified by ``master_seed`` and ``path``.

    Distinct paths give statistically independent streams, so trials can
    run in any order or in parallel without changing their numbers.
    """
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, path)]))


def random_orthogonal(n, rng):
    """Haar-distributed ``n x n`` orthogonal matrix."""
    if n < 1:
        raise DimensionError(f"orthogonal matrix dimension must be >= 1, got {n}")
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    # sign fix makes the distribution exactly Haar
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def gaussian_matrix(rows, cols, std, rng):
    if std < 0:
        raise ValueError("std must be non-negative")
    if std == 0:
        return np.zeros((rows, cols))
    return std * rng.standard_normal((rows, cols))


def tri_solve_upper(U, b, trans=False):
    """Solve ``U x = b`` (or ``U^T x = b`` with ``trans=True``) for upper-triangular U."""
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise DimensionError(f"triangular factor must be square, got {U.shape}")
    if not (U.diagonal() > 0).all():
        raise SingularFactorError("triangular factor has a non-positive diagonal entry")
    b = np.asarray(b, dtype=float)
    if b.shape[0] != U.shape[0]:
        raise DimensionError(f"right-hand side has {b.shape[0]} rows, factor has {U.shape[0]}")
    if U.flags.c_contiguous:
        # U.T is Fortran-ordered and lower triangular: LAPACK reads it without a copy
        x, _ = dtrtrs(U.T, b, lower=1, trans=0 if trans else 1)
    else:
        x, _ = dtrtrs(U, b, lower=0, trans=1 if trans else 0)
    return x


def tri_mul_upper(U, x, trans=False):
    """``triu(U) @ x`` (``triu(U).T @ x`` with ``trans=True``); inverts :func:`tri_solve_upper`."""
    U = np.asarray(U, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and U.flags.c_contiguous and U.shape[0] == x.size:
        return dtrmv(U.T, x, lower=1, trans=0 if trans else 1)
    T = np.triu(U)
    return (T.T if trans else T) @ x
