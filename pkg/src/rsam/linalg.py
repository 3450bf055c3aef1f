"""Dense real matrix helpers used throughout the package.

All matrices are 2-D float64 numpy arrays in row-major layout and are
treated as immutable values: every operation returns a fresh array.
"""

import numpy as np

from rsam.errors import RankError, ShapeError

RANK_TOL = 1e-12


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ ({a.shape} x {b.shape})")
    return a @ b


def qr_unique(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR with the sign convention diag(R) > 0, which makes the Q
    factor a deterministic function of the input.

    Raises RankError when any |r_ii| < 1e-12 before sign fixing.
    """
    a = as_matrix(a)
    n, p = a.shape
    if n < p:
        raise ShapeError(f"qr_unique requires rows >= cols, got {a.shape}")
    q, r = np.linalg.qr(a)  # Householder-based, thin factors
    d = np.diag(r)
    if np.any(np.abs(d) < RANK_TOL):
        raise RankError(
            f"rank-deficient input: min |r_ii| = {np.min(np.abs(d)):.3e}"
        )
    signs = np.sign(d)
    return q * signs, r * signs[:, None]


def sym(a: np.ndarray) -> np.ndarray:
    """Symmetric part (a + a^T) / 2."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"sym requires a square matrix, got {a.shape}")
    return 0.5 * (a + a.T)


def fro_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(as_matrix(a)))


def dot_flat(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product <a, b>."""
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"dot_flat: shapes differ ({a.shape} vs {b.shape})")
    return float(np.sum(a * b))


def scale(a: np.ndarray, c: float) -> np.ndarray:
    return as_matrix(a) * float(c)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ ({a.shape} vs {b.shape})")
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes differ ({a.shape} vs {b.shape})")
    return a - b


def transpose(a: np.ndarray) -> np.ndarray:
    return as_matrix(a).T.copy()


def diag_from_abs(a: np.ndarray) -> np.ndarray:
    """Elementwise absolute values, used as the entries of a diagonal
    metric over the flattened parameter.  The k x k diagonal matrix is
    never materialized; applying the metric is an elementwise product.
    """
    return np.abs(as_matrix(a))
