"""Dense three-way array helpers.

Arrays are plain ``numpy`` arrays of shape ``(n1, n2, n3)``.  Matricization
along mode 1 flattens the trailing ``(j, h)`` pair in C order, i.e. ``h``
varies fastest ("j-major").  :func:`factor_column_outer` uses the same order,
so that ``matricize_mode1(cp_compose(F1, F2, F3)) == F1 @ factor_column_outer(F2, F3).T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Raised when array or factor shapes are inconsistent."""


@dataclass(frozen=True)
class CpFactors:
    """Three factor matrices sharing a common column count (the CP rank)."""

    F1: np.ndarray
    F2: np.ndarray
    F3: np.ndarray

    def __post_init__(self):
        ranks = {np.shape(f)[1] if np.ndim(f) == 2 else None for f in (self.F1, self.F2, self.F3)}
        if len(ranks) != 1 or None in ranks:
            raise DimensionError(
                f"factor column counts differ: {[np.shape(f) for f in (self.F1, self.F2, self.F3)]}"
            )

    @property
    def rank(self) -> int:
        return self.F1.shape[1]

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.F1.shape[0], self.F2.shape[0], self.F3.shape[0])


def cp_compose(F1, F2=None, F3=None) -> np.ndarray:
    """Return the array with entries ``sum_r F1[a,r] F2[b,r] F3[c,r]``.

    Accepts either a :class:`CpFactors` or the three matrices.
    """
    if isinstance(F1, CpFactors):
        f = F1
    else:
        f = CpFactors(np.asarray(F1, float), np.asarray(F2, float), np.asarray(F3, float))
    return np.einsum("ar,br,cr->abc", f.F1, f.F2, f.F3)


def contract_mode1(X, B) -> np.ndarray:
    """Contract the leading mode of ``B`` (D x J x H) against the columns of ``X`` (I x D)."""
    X = np.asarray(X, float)
    B = np.asarray(B, float)
    if X.ndim != 2 or B.ndim != 3 or X.shape[1] != B.shape[0]:
        raise DimensionError(f"cannot contract X{X.shape} with B{B.shape}")
    return np.tensordot(X, B, axes=(1, 0))


def matricize_mode1(A) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 3:
        raise DimensionError(f"expected a 3-way array, got shape {A.shape}")
    return A.reshape(A.shape[0], -1)


def unmatricize_mode1(M, n2: int, n3: int) -> np.ndarray:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[1] != n2 * n3:
        raise DimensionError(f"matrix of shape {M.shape} does not fold into (*, {n2}, {n3})")
    return M.reshape(M.shape[0], n2, n3)


def factor_column_outer(F2, F3) -> np.ndarray:
    """Columnwise outer products, flattened to ``(J*H, R)`` in matricization order."""
    F2 = np.asarray(F2, float)
    F3 = np.asarray(F3, float)
    if F2.ndim != 2 or F3.ndim != 2 or F2.shape[1] != F3.shape[1]:
        raise DimensionError(f"column counts differ: F2{F2.shape}, F3{F3.shape}")
    return (F2[:, None, :] * F3[None, :, :]).reshape(-1, F2.shape[1])
