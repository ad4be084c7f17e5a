"""First-order derivatives of the estimation loss and the informativity
regularizer via adjoint Lyapunov equations, plus finite-difference
gradient and Hessian oracles.

For a stable filter, both objectives are smooth functions of the
stationary covariance Sigma, which itself solves a Lyapunov equation in
the closed loop.  Differentiating through that equation turns the
Sigma-gradient D of each objective into an adjoint solution M of
A_cl^T M + M A_cl + D = 0, from which the parameter gradient follows by
the chain rule:

    dA = 2 (M12^T Sigma12 + M22 Sigma22)
    dB = 2 (M12^T Sigma11 C^T + M22 Sigma12^T C^T + M22 B_K W2)

The estimation loss adds a direct C_K term, dC = 2 (C_K Sigma22 -
G Sigma12); the regularizer does not depend on C_K at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import lyap
from .errors import NotInformative, NotStable, OutOfDomain
from .model import Filter, OEInstance, StationaryState, stationary

FD_GRAD_STEP = 1e-6
FD_HESS_STEP = 1e-4


@dataclass
class Gradient:
    """Gradient blocks matching the filter parameters (dA, dB, dC)."""

    dA: np.ndarray
    dB: np.ndarray
    dC: np.ndarray

    def norm(self) -> float:
        return math.sqrt(np.sum(self.dA**2) + np.sum(self.dB**2) + np.sum(self.dC**2))

    def scaled(self, alpha: float) -> "Gradient":
        return Gradient(alpha * self.dA, alpha * self.dB, alpha * self.dC)

    def plus(self, other: "Gradient") -> "Gradient":
        return Gradient(self.dA + other.dA, self.dB + other.dB, self.dC + other.dC)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.dA.ravel(), self.dB.ravel(), self.dC.ravel()])


def apply_step(filt: Filter, grad: Gradient, eta: float) -> Filter:
    """Gradient-descent update K - eta * grad."""
    return Filter(
        A_K=filt.A_K - eta * grad.dA,
        B_K=filt.B_K - eta * grad.dB,
        C_K=filt.C_K - eta * grad.dC,
    )


def _adjoint_blocks(state: StationaryState, rhs: np.ndarray, n: int):
    adj = lyap.clyap(state.A_cl.T, rhs)
    return adj[:n, n:], adj[n:, n:]


def _chain_rule(
    state: StationaryState, instance: OEInstance, filt: Filter, m12, m22
) -> tuple[np.ndarray, np.ndarray]:
    c, w2 = instance.C, instance.W2
    da = 2.0 * (m12.T @ state.Sigma12 + m22 @ state.Sigma22)
    db = 2.0 * (
        m12.T @ state.Sigma11 @ c.T
        + m22 @ state.Sigma12.T @ c.T
        + m22 @ filt.B_K @ w2
    )
    return da, db


def grad_oe_from_state(
    instance: OEInstance, filt: Filter, state: StationaryState
) -> Gradient:
    n = instance.n
    e = np.hstack([instance.G, -filt.C_K])
    m12, m22 = _adjoint_blocks(state, e.T @ e, n)
    da, db = _chain_rule(state, instance, filt, m12, m22)
    dc = 2.0 * (filt.C_K @ state.Sigma22 - instance.G @ state.Sigma12)
    return Gradient(dA=da, dB=db, dC=dc)


def grad_oe(instance: OEInstance, filt: Filter) -> Gradient:
    """Analytic gradient of the estimation loss at a stable filter."""
    return grad_oe_from_state(instance, filt, stationary(instance, filt))


def grad_info_from_state(
    instance: OEInstance, filt: Filter, state: StationaryState
) -> Gradient:
    if not state.informative:
        raise NotInformative("Sigma12 is rank deficient")
    n = instance.n
    t = np.linalg.solve(state.Sigma12, np.eye(n))
    u = t @ t.T
    b21 = u @ state.Sigma22 @ t
    rhs = np.block([[np.zeros((n, n)), -b21.T], [-b21, u]])
    m12, m22 = _adjoint_blocks(state, rhs, n)
    da, db = _chain_rule(state, instance, filt, m12, m22)
    return Gradient(dA=da, dB=db, dC=np.zeros_like(filt.C_K))


def grad_info(instance: OEInstance, filt: Filter) -> Gradient:
    """Analytic gradient of tr(Z^{-1}) at an informative filter."""
    return grad_info_from_state(instance, filt, stationary(instance, filt))


def grad_total(instance: OEInstance, filt: Filter, lam: float) -> Gradient:
    """Gradient of loss_oe + lam * reg_info; lam = 0 skips the regularizer."""
    state = stationary(instance, filt)
    g = grad_oe_from_state(instance, filt, state)
    if lam == 0:
        return g
    return g.plus(grad_info_from_state(instance, filt, state).scaled(lam))


def _filter_coords(filt: Filter):
    """Flat read/write views of the filter parameters."""
    blocks = [filt.A_K, filt.B_K, filt.C_K]
    sizes = [b.size for b in blocks]
    return blocks, sizes


def _perturbed(filt: Filter, index: int, delta: float) -> Filter:
    a, b, c = filt.A_K.copy(), filt.B_K.copy(), filt.C_K.copy()
    out = [a, b, c]
    for block in out:
        if index < block.size:
            block.ravel()[index] += delta
            break
        index -= block.size
    return Filter(A_K=a, B_K=b, C_K=c)


def fd_gradient(f: Callable[[Filter], float], filt: Filter, h: float) -> Gradient:
    """Central-difference gradient of an extended-real functional.

    Raises ``OutOfDomain`` if any stencil point evaluates nonfinite.
    """
    _, sizes = _filter_coords(filt)
    total = sum(sizes)
    flat = np.empty(total)
    for k in range(total):
        fp = f(_perturbed(filt, k, +h))
        fm = f(_perturbed(filt, k, -h))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OutOfDomain(f"objective is not finite at coordinate {k} +/- h")
        flat[k] = (fp - fm) / (2.0 * h)
    n, nm, pn = sizes
    na = filt.A_K.shape
    nb = filt.B_K.shape
    nc = filt.C_K.shape
    return Gradient(
        dA=flat[:n].reshape(na),
        dB=flat[n : n + nm].reshape(nb),
        dC=flat[n + nm :].reshape(nc),
    )


def hessian_min_eig(instance: OEInstance, filt: Filter, lam: float, h: float) -> float:
    """Minimum eigenvalue of the symmetrized finite-difference Hessian.

    Columns are central differences of the analytic gradient of
    loss_oe + lam * reg_info.
    """
    _, sizes = _filter_coords(filt)
    total = sum(sizes)
    hess = np.empty((total, total))
    for k in range(total):
        try:
            gp = grad_total(instance, _perturbed(filt, k, +h), lam)
            gm = grad_total(instance, _perturbed(filt, k, -h), lam)
        except (NotInformative, NotStable) as exc:
            raise OutOfDomain(str(exc)) from exc
        hess[:, k] = (gp.to_vector() - gm.to_vector()) / (2.0 * h)
    hess = 0.5 * (hess + hess.T)
    return float(np.linalg.eigvalsh(hess)[0])
