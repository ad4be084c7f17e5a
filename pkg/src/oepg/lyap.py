"""Continuous Lyapunov and algebraic Riccati equation solvers, plus
controllability/observability Gramians.

The Lyapunov solver delegates to the Bartels-Stewart routine in SciPy;
tests cross-check it against an independent Kronecker-vectorization
oracle.  The Riccati solver is a Newton-Kleinman iteration built on the
Lyapunov solver, started from the always-stabilizing gain
L0 = P0 C^T W2^{-1} with P0 the open-loop state covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import (
    AssumptionViolated,
    DimensionMismatch,
    NotStable,
    RiccatiFailure,
)
from .linalg import as_matrix, symmetrize

# Hurwitz means max Re lambda < -HURWITZ_MARGIN: strict with a margin, so
# Lyapunov solvability is guarded against roundoff.
HURWITZ_MARGIN = 1e-9

_NEWTON_TOL = 1e-12
_NEWTON_MAX_ITERS = 200


def spectral_abscissa(a) -> float:
    """max Re lambda(A)."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected square matrix, got {a.shape}")
    if a.shape == (2, 2):
        # Closed form via trace/determinant; avoids an eigvals call in the
        # optimizer's line search.
        tr = a[0, 0] + a[1, 1]
        disc = tr * tr - 4.0 * (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])
        if disc >= 0.0:
            return 0.5 * (tr + math.sqrt(disc))
        return 0.5 * tr
    return float(np.max(np.linalg.eigvals(a).real))


def is_hurwitz(a, margin: float = HURWITZ_MARGIN) -> bool:
    return spectral_abscissa(a) < -margin


# Below this order, Sylvester solves go through dense Kronecker
# vectorization; above it, through SciPy's Schur-based routine.
_KRON_MAX_N = 12


def sylvester(a, b, q) -> np.ndarray:
    """Solve A X + X B + Q = 0 (spectra of A and -B must be disjoint)."""
    a = as_matrix(a)
    b = as_matrix(b)
    q = as_matrix(q)
    n, m = q.shape
    if a.shape != (n, n) or b.shape != (m, m):
        raise DimensionMismatch(f"incompatible shapes {a.shape}, {b.shape}, {q.shape}")
    if max(n, m) <= _KRON_MAX_N:
        # Row-major vec: vec(AX) = (A (x) I) vec(X), vec(XB) = (I (x) B^T) vec(X).
        k = np.kron(a, np.eye(m)) + np.kron(np.eye(n), b.T)
        return np.linalg.solve(k, -q.ravel()).reshape(n, m)
    return sla.solve_sylvester(a, b, -q)


def clyap(a, q) -> np.ndarray:
    """Solve A X + X A^T + Q = 0 for Hurwitz A and symmetric Q."""
    a = as_matrix(a)
    q = as_matrix(q)
    if a.shape[0] != a.shape[1] or a.shape != q.shape:
        raise DimensionMismatch(f"incompatible shapes {a.shape} and {q.shape}")
    if not is_hurwitz(a):
        raise NotStable(f"spectral abscissa {spectral_abscissa(a):.3e} is not < 0")
    x = sla.solve_continuous_lyapunov(a, -symmetrize(q))
    return symmetrize(x)


def ctrb_gramian(a, b) -> np.ndarray:
    """Controllability Gramian: solution of A Y + Y A^T + B B^T = 0."""
    b = as_matrix(b)
    return clyap(a, b @ b.T)


def obs_gramian(a, c) -> np.ndarray:
    """Observability Gramian: solution of A^T Y + Y A + C^T C = 0."""
    a = as_matrix(a)
    c = as_matrix(c)
    return clyap(a.T, c.T @ c)


@dataclass
class RiccatiSolution:
    """Stabilizing solution of the filtering Riccati equation.

    ``P`` is the steady-state error covariance, ``L = P C^T W2^{-1}`` the
    optimal gain, and ``closed_loop = A - L C`` is Hurwitz.
    """

    P: np.ndarray
    L: np.ndarray
    closed_loop: np.ndarray


def care(a, c, w1, w2) -> RiccatiSolution:
    """Solve A P + P A^T - P C^T W2^{-1} C P + W1 = 0 for the stabilizing P.

    Requires A Hurwitz, (A, C) observable, and W1, W2 positive definite.
    """
    a = as_matrix(a)
    c = as_matrix(c)
    w1 = as_matrix(w1)
    w2 = as_matrix(w2)
    n = a.shape[0]
    m = c.shape[0]
    if a.shape != (n, n) or c.shape[1] != n or w1.shape != (n, n) or w2.shape != (m, m):
        raise DimensionMismatch(
            f"incompatible shapes A{a.shape} C{c.shape} W1{w1.shape} W2{w2.shape}"
        )
    if not is_hurwitz(a):
        raise AssumptionViolated("stability", "A is not Hurwitz")
    w1_eigs = np.linalg.eigvalsh(symmetrize(w1))
    w2_eigs = np.linalg.eigvalsh(symmetrize(w2))
    if w1_eigs[0] <= 0:
        raise AssumptionViolated("noise definiteness", "W1 is not positive definite")
    if w2_eigs[0] <= 0:
        raise AssumptionViolated("noise definiteness", "W2 is not positive definite")
    gram = obs_gramian(a, c)
    gram_eigs = np.linalg.eigvalsh(gram)
    if gram_eigs[0] <= 1e-12 * max(gram_eigs[-1], 1e-300):
        raise AssumptionViolated("observability", "(A, C) observability Gramian is singular")

    w2_inv_c = np.linalg.solve(w2, c)

    # Initial gain P0 C^T W2^{-1} is stabilizing because A P0 + P0 A^T = -W1 < 0.
    p = clyap(a, w1)
    gain = p @ w2_inv_c.T
    for _ in range(_NEWTON_MAX_ITERS):
        a_cl = a - gain @ c
        if not is_hurwitz(a_cl):
            raise RiccatiFailure("Newton iterate lost stability")
        p_next = clyap(a_cl, w1 + gain @ w2 @ gain.T)
        gain = p_next @ w2_inv_c.T
        if np.linalg.norm(p_next - p) <= _NEWTON_TOL * max(np.linalg.norm(p), 1e-300):
            p = p_next
            break
        p = p_next
    else:
        raise RiccatiFailure(f"no convergence in {_NEWTON_MAX_ITERS} iterations")

    p = symmetrize(p)
    gain = p @ w2_inv_c.T
    a_cl = a - gain @ c
    residual = a @ p + p @ a.T - p @ c.T @ np.linalg.solve(w2, c @ p) + w1
    if np.linalg.norm(residual) > 1e-8 * np.linalg.norm(w1):
        raise RiccatiFailure(f"residual {np.linalg.norm(residual):.3e} too large")
    if not is_hurwitz(a_cl):
        raise RiccatiFailure("solution is not stabilizing")
    if np.linalg.eigvalsh(p)[0] <= 0:
        raise RiccatiFailure("solution is not positive definite")
    return RiccatiSolution(P=p, L=gain, closed_loop=a_cl)
