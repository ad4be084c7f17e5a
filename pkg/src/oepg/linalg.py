"""Dense real-matrix kernels: symmetric eigendecompositions, general
eigenvalues, linear solves, and SPD matrix functions.

All matrices are plain float64 ``numpy.ndarray`` values.  Symmetric inputs
are explicitly symmetrized before decomposition, because downstream
Lyapunov solutions accumulate asymmetry at roundoff level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite, SingularMatrix

# Condition-number limit above which a linear system is declared singular.
COND_LIMIT = 1e14


def as_matrix(m) -> np.ndarray:
    """Coerce to a 2-D float64 array."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def _square(m) -> np.ndarray:
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    return a


def symmetrize(m: np.ndarray) -> np.ndarray:
    """(M + M^T) / 2."""
    return 0.5 * (m + m.T)


@dataclass
class Spectrum:
    """Eigendecomposition of a symmetric matrix.

    ``eigenvalues`` are real and sorted descending; ``eigenvectors`` holds
    the matching orthonormal eigenvectors as columns.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def sym_eig(m) -> Spectrum:
    """Eigendecomposition of a symmetric matrix (symmetrized internally)."""
    a = symmetrize(_square(m))
    w, v = np.linalg.eigh(a)
    return Spectrum(w[::-1].copy(), v[:, ::-1].copy())


def sym_eigvals(m) -> np.ndarray:
    """Eigenvalues only, descending."""
    a = symmetrize(_square(m))
    return np.linalg.eigvalsh(a)[::-1].copy()


def gen_eig_values(m) -> np.ndarray:
    """Eigenvalues of a general square matrix (complex, arbitrary order)."""
    return np.linalg.eigvals(_square(m))


def solve_linear(a, b) -> np.ndarray:
    """Solve A X = B for square, numerically nonsingular A."""
    a = _square(a)
    b = np.asarray(b, dtype=float)
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMatrix(f"condition estimate {cond:.3e} exceeds {COND_LIMIT:.0e}")
    return np.linalg.solve(a, b)


def spd_inv_sqrt(m) -> np.ndarray:
    """Inverse matrix square root M^{-1/2} of an SPD matrix.

    The result S is symmetric PD with S M S = I.
    """
    a = symmetrize(_square(m))
    w, v = np.linalg.eigh(a)
    if w[-1] <= 0 or w[0] <= 1e-12 * w[-1]:
        raise NotPositiveDefinite(
            f"eigenvalue range [{w[0]:.3e}, {w[-1]:.3e}] is not safely positive"
        )
    return symmetrize((v / np.sqrt(w)) @ v.T)
