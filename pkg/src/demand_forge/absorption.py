"""Fixed-effect absorption by alternating projections."""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from .errors import NonConvergence


class Absorber:
    """Residualize matrices on several categorical factors.

    Each sweep subtracts group means factor by factor; sweeps repeat until the largest absolute change in a sweep
    falls below ``tol``. The limit is the residual from regressing each column on the full set of dummies.

    Parameters
    ----------
    factors : `sequence of array-like`
        One label array per fixed-effect dimension, each with one entry per observation.
    tol : `float`
        Convergence threshold on the maximum absolute change over a sweep.
    max_sweeps : `int`
        Sweeps allowed before :class:`NonConvergence` is raised.
    """

    def __init__(self, factors: Sequence, tol: float = 1e-10, max_sweeps: int = 500) -> None:
        self.codes: List[np.ndarray] = []
        self.counts: List[np.ndarray] = []
        for factor in factors:
            codes = np.unique(np.asarray(factor), return_inverse=True)[1].ravel()
            counts = np.bincount(codes).astype(float)
            if counts.size == 0:
                raise ValueError("Fixed-effect factors must be non-empty")
            self.codes.append(codes)
            self.counts.append(counts)
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.sweeps = 0

    @property
    def levels(self) -> int:
        return sum(c.size for c in self.counts)

    def residualize(self, matrix: np.ndarray) -> np.ndarray:
        matrix = np.array(matrix, dtype=float, copy=True)
        vector = matrix.ndim == 1
        if vector:
            matrix = matrix[:, None]
        if not self.codes:
            return matrix[:, 0] if vector else matrix
        for sweep in range(1, self.max_sweeps + 1):
            change = 0.0
            for codes, counts in zip(self.codes, self.counts):
                means = np.empty((counts.size, matrix.shape[1]))
                for column in range(matrix.shape[1]):
                    means[:, column] = np.bincount(codes, weights=matrix[:, column], minlength=counts.size)
                means /= counts[:, None]
                step = means[codes]
                matrix -= step
                change = max(change, float(np.abs(step).max()))
            if change < self.tol or len(self.codes) == 1:
                self.sweeps = sweep
                return matrix[:, 0] if vector else matrix
        self.sweeps = self.max_sweeps
        raise NonConvergence(f"Fixed-effect absorption did not converge in {self.max_sweeps} sweeps")


def absorb_fixed_effects(
        y: np.ndarray, X: np.ndarray, Z: np.ndarray, factors: Sequence, tol: float = 1e-10,
        max_sweeps: int = 500) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Demean ``y``, ``X`` and ``Z`` jointly on the given factors."""
    y = np.asarray(y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float).T).T
    Z = np.atleast_2d(np.asarray(Z, dtype=float).T).T
    stacked = np.column_stack([y, X, Z])
    demeaned = Absorber(factors, tol, max_sweeps).residualize(stacked)
    k = X.shape[1]
    return demeaned[:, 0], demeaned[:, 1:1 + k], demeaned[:, 1 + k:]
