"""Small exact rational linear algebra on numpy object arrays of Fractions."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .errors import ContractError

_to_fraction = np.frompyfunc(lambda v: v if isinstance(v, Fraction) else Fraction(v), 1, 1)
_to_float = np.frompyfunc(float, 1, 1)


def exact(x) -> np.ndarray:
    """Exact Fraction copy of ``x``; floats convert without rounding."""
    arr = np.asarray(x)
    if arr.dtype != object:
        arr = arr.astype(float)
        arr = arr.astype(object)
    out = _to_fraction(arr)
    return np.asarray(out, dtype=object).reshape(arr.shape)


def to_float(x) -> np.ndarray:
    arr = np.asarray(x, dtype=object)
    return np.asarray(_to_float(arr), dtype=float).reshape(arr.shape)


def eye(m: int) -> np.ndarray:
    out = np.full((m, m), Fraction(0), dtype=object)
    for i in range(m):
        out[i, i] = Fraction(1)
    return out


def solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a x = b`` exactly by Gauss-Jordan elimination."""
    m = a.shape[0]
    vec = b.ndim == 1
    aug = np.concatenate([a.copy(), b.reshape(m, -1).copy()], axis=1)
    for col in range(m):
        pivot = next((r for r in range(col, m) if aug[r, col] != 0), None)
        if pivot is None:
            raise ContractError("singular matrix in exact solve")
        if pivot != col:
            aug[[col, pivot]] = aug[[pivot, col]]
        aug[col] = aug[col] / aug[col, col]
        for r in range(m):
            if r != col and aug[r, col] != 0:
                aug[r] = aug[r] - aug[r, col] * aug[col]
    x = aug[:, m:]
    return x[:, 0] if vec else x


def inv(a: np.ndarray) -> np.ndarray:
    return solve(a, eye(a.shape[0]))


def is_positive_definite(a: np.ndarray) -> bool:
    """Exact test via symmetric elimination: all pivots positive."""
    work = a.copy()
    m = work.shape[0]
    for col in range(m):
        piv = work[col, col]
        if piv <= 0:
            return False
        for r in range(col + 1, m):
            if work[r, col] != 0:
                work[r, col:] = work[r, col:] - (work[r, col] / piv) * work[col, col:]
    return True


def min_eigenvalue_exceeds(a: np.ndarray, bound) -> bool:
    """Exact test of ``lambda_min(a) > bound`` for a symmetric rational matrix."""
    return is_positive_definite(a - Fraction(bound) * eye(a.shape[0]))


def max_abs(x) -> Fraction:
    return max((abs(v) for v in np.asarray(x, dtype=object).ravel()), default=Fraction(0))
