"""Dense linear-algebra helpers, activations and initializers.

Vectors are 1-D float64 arrays (the row convention of the cell equations),
matrices are 2-D float64 arrays stored row-major.
"""
import numpy as np

from .errors import ShapeError

DTYPE = np.float64


def make_rng(seed):
    """Seeded generator; identical seeds give identical draw sequences."""
    return np.random.Generator(np.random.PCG64(seed))


def as_vec(v):
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim != 1 or v.size == 0:
        raise ShapeError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    return v


def as_mat(m):
    m = np.asarray(m, dtype=DTYPE)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matvec(m, v):
    m = as_mat(m)
    v = as_vec(v)
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: matrix {m.shape} incompatible with vector {v.shape}")
    return m @ v


def hadamard(a, b):
    a = as_vec(a)
    b = as_vec(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: length mismatch {a.shape} vs {b.shape}")
    return a * b


def sigmoid(v):
    # tanh form cannot overflow; saturates to exactly 0 or 1 beyond |v| ~ 37
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(v, dtype=DTYPE)))


def tanh(v):
    return np.tanh(np.asarray(v, dtype=DTYPE))


def glorot_init(rows, cols, rng):
    """Glorot-uniform matrix with entries in +-sqrt(6 / (rows + cols))."""
    if rows <= 0 or cols <= 0:
        raise ShapeError(f"glorot_init needs positive dims, got ({rows}, {cols})")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))
