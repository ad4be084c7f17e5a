"""Output-estimation problem model: instances, filters, closed-loop
stationary analysis, losses, regularizers, similarity transforms,
reconditioning, and structural predicates.

The closed loop of an instance (A, C, G, W1, W2) with a filter
(A_K, B_K, C_K) has block lower-triangular drift

    A_cl = [[A, 0], [B_K C, A_K]],   W_cl = [[W1, 0], [0, B_K W2 B_K^T]],

and its stationary covariance Sigma solves A_cl Sigma + Sigma A_cl^T +
W_cl = 0.  The (1,1) block depends only on the instance; the cross block
Sigma12 measures how informative the filter state is about the true
state, and Z = Sigma12 Sigma22^{-1} Sigma12^T is the explained
covariance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from . import lyap
from .errors import (
    AssumptionViolated,
    DimensionMismatch,
    NotControllable,
    NotStable,
    SingularMatrix,
)
from .linalg import as_matrix, spd_inv_sqrt, symmetrize

# Relative sigma_min threshold declaring Sigma12 full rank (informativity).
INFO_RANK_TOL = 1e-10
# Relative lambda_min threshold declaring Sigma22 nonsingular (controllability).
CTRB_EIG_TOL = 1e-12
# Condition-number limit for similarity transform matrices.
SIM_COND_LIMIT = 1e12
# Residue magnitude below which a pole-zero cancellation is declared,
# relative to |B_K| |C_K|.
RESIDUE_TOL = 1e-10
# Relative pole separation below which a repeated pole is declared.
POLE_TOL = 1e-10

REGION1 = "region1"
REGION2 = "region2"
REGION3 = "region3"
DEGENERATE = "degenerate"


@dataclass
class OEInstance:
    """True system (A, C, G, W1, W2).

    A must be Hurwitz, (A, C) observable, and W1, W2 positive definite;
    violations raise ``AssumptionViolated`` at construction.
    """

    A: np.ndarray
    C: np.ndarray
    G: np.ndarray
    W1: np.ndarray
    W2: np.ndarray

    def __post_init__(self):
        self.A = as_matrix(self.A)
        self.C = as_matrix(self.C)
        self.G = as_matrix(self.G)
        self.W1 = as_matrix(self.W1)
        self.W2 = as_matrix(self.W2)
        n = self.A.shape[0]
        m, p = self.C.shape[0], self.G.shape[0]
        if self.A.shape != (n, n):
            raise DimensionMismatch("A must be square")
        if self.C.shape != (m, n) or self.G.shape != (p, n):
            raise DimensionMismatch("C and G must have n columns")
        if self.W1.shape != (n, n) or self.W2.shape != (m, m):
            raise DimensionMismatch("W1 must be n x n and W2 must be m x m")
        if not lyap.is_hurwitz(self.A):
            raise AssumptionViolated("stability", "A is not Hurwitz")
        for name, w in (("W1", self.W1), ("W2", self.W2)):
            if np.linalg.eigvalsh(symmetrize(w))[0] <= 0:
                raise AssumptionViolated("noise definiteness", f"{name} is not PD")
        gram = lyap.obs_gramian(self.A, self.C)
        if np.linalg.eigvalsh(gram)[0] <= 1e-12:
            raise AssumptionViolated("observability", "(A, C) is not observable")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def p(self) -> int:
        return self.G.shape[0]


@dataclass
class Filter:
    """Dynamic filter parameters (A_K, B_K, C_K).

    No stability requirement at construction; predicates test it.
    """

    A_K: np.ndarray
    B_K: np.ndarray
    C_K: np.ndarray

    def __post_init__(self):
        self.A_K = as_matrix(self.A_K)
        self.B_K = as_matrix(self.B_K)
        self.C_K = as_matrix(self.C_K)
        n = self.A_K.shape[0]
        if self.A_K.shape != (n, n):
            raise DimensionMismatch("A_K must be square")
        if self.B_K.shape[0] != n or self.C_K.shape[1] != n:
            raise DimensionMismatch("B_K rows and C_K columns must match A_K")

    @property
    def n(self) -> int:
        return self.A_K.shape[0]

    def params_norm(self) -> float:
        """sqrt(|A_K|_F^2 + |B_K|_F^2 + |C_K|_F^2)."""
        return math.sqrt(
            np.sum(self.A_K**2) + np.sum(self.B_K**2) + np.sum(self.C_K**2)
        )


@dataclass
class StationaryState:
    """Stationary closed-loop data for an (instance, filter) pair.

    The assembled 2n x 2n matrices (``A_cl``, ``W_cl``, ``Sigma``) and the
    explained covariance ``Z`` are built lazily; the optimizer's line
    search touches thousands of these objects and only needs the blocks.
    """

    Sigma11: np.ndarray
    Sigma12: np.ndarray
    Sigma22: np.ndarray
    informative: bool
    controllable: bool
    sigma12_min: float
    sigma12_max: float
    sigma22_min: float
    sigma22_max: float
    # Signed eigenvalue range of Sigma22 (the sigma fields above are |eig|).
    eig22_min: float
    eig22_max: float
    _instance: "OEInstance"
    _filter: "Filter"

    @cached_property
    def A_cl(self) -> np.ndarray:
        a, n = self._instance.A, self._instance.n
        return np.block(
            [[a, np.zeros((n, n))], [self._filter.B_K @ self._instance.C, self._filter.A_K]]
        )

    @cached_property
    def W_cl(self) -> np.ndarray:
        n = self._instance.n
        bk = self._filter.B_K
        return np.block(
            [
                [self._instance.W1, np.zeros((n, n))],
                [np.zeros((n, n)), bk @ self._instance.W2 @ bk.T],
            ]
        )

    @cached_property
    def Sigma(self) -> np.ndarray:
        return np.block(
            [[self.Sigma11, self.Sigma12], [self.Sigma12.T, self.Sigma22]]
        )

    @cached_property
    def Z(self) -> Optional[np.ndarray]:
        if not self.controllable:
            return None
        return symmetrize(self.Sigma12 @ np.linalg.solve(self.Sigma22, self.Sigma12.T))


def stationary(
    instance: OEInstance,
    filt: Filter,
    *,
    info_tol: float = INFO_RANK_TOL,
    ctrb_tol: float = CTRB_EIG_TOL,
    sigma11: Optional[np.ndarray] = None,
) -> StationaryState:
    """Solve the closed-loop Lyapunov equation blockwise and classify.

    The block lower-triangular closed loop decouples the solve: Sigma11
    from the instance alone, Sigma12 from a Sylvester equation, Sigma22
    from a Lyapunov equation in A_K.  ``sigma11`` may carry a precomputed
    instance covariance (it does not depend on the filter); optimizer
    loops use this to avoid re-solving.  Raises ``NotStable`` if A_K is
    not Hurwitz.
    """
    a, c, w2 = instance.A, instance.C, instance.W2
    ak, bk = filt.A_K, filt.B_K
    n = instance.n
    if filt.n != n or filt.B_K.shape[1] != instance.m:
        raise DimensionMismatch("filter dimensions do not match instance")
    if not lyap.is_hurwitz(ak):
        raise NotStable("A_K is not Hurwitz")

    if sigma11 is None:
        sigma11 = lyap.clyap(a, instance.W1)
    # Cross block: A S12 + S12 A_K^T + Sigma11 C^T B_K^T = 0.
    sigma12 = lyap.sylvester(a, ak.T, sigma11 @ (bk @ c).T)
    # Filter block: A_K S22 + S22 A_K^T + (B_K C S12 + ^T) + B_K W2 B_K^T = 0.
    cross = bk @ (c @ sigma12)
    sigma22 = lyap.sylvester(ak, ak.T, cross + cross.T + bk @ w2 @ bk.T)
    sigma22 = symmetrize(sigma22)

    sv12 = np.linalg.svd(sigma12, compute_uv=False)
    ev22 = np.linalg.eigvalsh(sigma22)
    s12_max, s12_min = float(sv12[0]), float(sv12[-1])
    informative = s12_min > info_tol * s12_max
    # The controllability test uses signed eigenvalues; the sigma diagnostics
    # report singular values (|eig| for the symmetric block).
    controllable = float(ev22[0]) > ctrb_tol * max(float(ev22[-1]), 0.0)
    abs22 = np.abs(ev22)

    return StationaryState(
        Sigma11=sigma11,
        Sigma12=sigma12,
        Sigma22=sigma22,
        informative=informative,
        controllable=controllable,
        sigma12_min=s12_min,
        sigma12_max=s12_max,
        sigma22_min=float(abs22.min()),
        sigma22_max=float(abs22.max()),
        eig22_min=float(ev22[0]),
        eig22_max=float(ev22[-1]),
        _instance=instance,
        _filter=filt,
    )


def _loss_oe_from_state(state: StationaryState, g: np.ndarray, ck: np.ndarray) -> float:
    # tr(G S11 G^T) - 2 tr(G S12 C_K^T) + tr(C_K S22 C_K^T), blockwise.
    return float(
        np.sum((g @ state.Sigma11) * g)
        - 2.0 * np.sum((g @ state.Sigma12) * ck)
        + np.sum((ck @ state.Sigma22) * ck)
    )


def loss_oe(instance: OEInstance, filt: Filter) -> float:
    """Steady-state prediction error; +inf for unstable filters."""
    try:
        state = stationary(instance, filt)
    except NotStable:
        return math.inf
    return _loss_oe_from_state(state, instance.G, filt.C_K)


def reg_info(state: StationaryState) -> float:
    """tr(Z^{-1}) when the filter is informative, +inf otherwise."""
    if not (state.controllable and state.informative) or state.Z is None:
        return math.inf
    try:
        return float(np.trace(np.linalg.solve(state.Z, np.eye(state.Z.shape[0]))))
    except np.linalg.LinAlgError:
        return math.inf


def _gramian_penalty(y: Optional[np.ndarray]) -> float:
    if y is None:
        return math.inf
    ev = np.linalg.eigvalsh(y)
    if ev[0] <= 1e-14 * max(ev[-1], 0.0) or ev[-1] <= 0:
        return math.inf
    return float(np.linalg.norm(y - np.linalg.inv(y)) ** 2)


def reg_ctrb(filt: Filter) -> float:
    """|Y - Y^{-1}|_F^2 for the controllability Gramian of (A_K, B_K)."""
    try:
        y = lyap.ctrb_gramian(filt.A_K, filt.B_K)
    except NotStable:
        return math.inf
    return _gramian_penalty(y)


def reg_obs(filt: Filter) -> float:
    """|Y - Y^{-1}|_F^2 for the observability Gramian of (A_K, C_K)."""
    try:
        y = lyap.obs_gramian(filt.A_K, filt.C_K)
    except NotStable:
        return math.inf
    return _gramian_penalty(y)


def loss_total(instance: OEInstance, filt: Filter, lam: float) -> float:
    """loss_oe + lam * reg_info under extended-real arithmetic.

    With lam = 0, the regularizer is dropped entirely (no 0 * inf).
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    try:
        state = stationary(instance, filt)
    except NotStable:
        return math.inf
    base = _loss_oe_from_state(state, instance.G, filt.C_K)
    if lam == 0:
        return base
    return base + lam * reg_info(state)


def similarity(filt: Filter, s) -> Filter:
    """Change of filter coordinates: (S A_K S^{-1}, S B_K, C_K S^{-1})."""
    s = as_matrix(s)
    if s.shape != (filt.n, filt.n):
        raise DimensionMismatch("S must be n x n")
    cond = np.linalg.cond(s)
    if not np.isfinite(cond) or cond >= SIM_COND_LIMIT:
        raise SingularMatrix(f"condition estimate {cond:.3e} exceeds {SIM_COND_LIMIT:.0e}")
    # X S^{-1} computed as solve(S^T, X^T)^T to avoid forming the inverse.
    a_new = np.linalg.solve(s.T, (s @ filt.A_K).T).T
    c_new = np.linalg.solve(s.T, filt.C_K.T).T
    return Filter(A_K=a_new, B_K=s @ filt.B_K, C_K=c_new)


def recondition(instance: OEInstance, filt: Filter) -> Filter:
    """Similarity transform with S = Sigma22^{-1/2}, making Sigma22 = I."""
    state = stationary(instance, filt)
    if not state.controllable:
        raise NotControllable("Sigma22 is singular; cannot recondition")
    return similarity(filt, spd_inv_sqrt(state.Sigma22))


def kalman(instance: OEInstance) -> tuple[Filter, lyap.RiccatiSolution]:
    """Canonical optimal filter (A - L C, L, G) and its Riccati solution."""
    sol = lyap.care(instance.A, instance.C, instance.W1, instance.W2)
    return Filter(A_K=sol.closed_loop, B_K=sol.L, C_K=instance.G.copy()), sol


def normalized_suboptimality(instance: OEInstance, filt: Filter) -> float:
    """(loss_oe(K) - loss_oe(K*)) / loss_oe(K*), reported raw (no clamp)."""
    opt_filter, _ = kalman(instance)
    opt_loss = loss_oe(instance, opt_filter)
    if not opt_loss > 0:
        raise ValueError(f"optimal loss {opt_loss} is not positive")
    return (loss_oe(instance, filt) - opt_loss) / opt_loss


def region_classify(
    filt: Filter,
    *,
    residue_tol: float = RESIDUE_TOL,
    pole_tol: float = POLE_TOL,
) -> str:
    """Classify a second-order SISO filter by pole reality and residue signs.

    Returns one of ``region1`` (real poles, both residues positive),
    ``region2`` (complex poles, or real poles with opposite-sign residues),
    ``region3`` (real poles, both residues negative), or ``degenerate``
    (repeated pole or a vanishing residue, i.e. pole-zero cancellation).
    """
    if filt.n != 2 or filt.B_K.shape[1] != 1 or filt.C_K.shape[0] != 1:
        raise DimensionMismatch("region classification requires n=2, m=1, p=1")
    poles, vecs = np.linalg.eig(filt.A_K)
    scale = max(abs(poles[0]), abs(poles[1]), 1.0)
    if abs(poles[0] - poles[1]) <= pole_tol * scale:
        return DEGENERATE
    # Partial fractions of C_K (sI - A_K)^{-1} B_K: residue of pole i is
    # (C_K v_i)(w_i^T B_K) with w_i^T the i-th row of V^{-1}.
    left = (filt.C_K @ vecs).ravel()
    right = np.linalg.solve(vecs, filt.B_K).ravel()
    residues = left * right
    res_scale = np.linalg.norm(filt.B_K) * np.linalg.norm(filt.C_K)
    if np.min(np.abs(residues)) <= residue_tol * max(res_scale, 1e-300):
        return DEGENERATE
    if np.max(np.abs(poles.imag)) > pole_tol * scale:
        return REGION2
    r = residues.real
    if r[0] > 0 and r[1] > 0:
        return REGION1
    if r[0] < 0 and r[1] < 0:
        return REGION3
    return REGION2


# ---------------------------------------------------------------------------
# JSON serialization (row-major nested arrays, full double precision)


def instance_to_dict(instance: OEInstance) -> dict:
    return {
        "A": instance.A.tolist(),
        "C": instance.C.tolist(),
        "G": instance.G.tolist(),
        "W1": instance.W1.tolist(),
        "W2": instance.W2.tolist(),
    }


def instance_from_dict(data: dict) -> OEInstance:
    return OEInstance(
        A=data["A"], C=data["C"], G=data["G"], W1=data["W1"], W2=data["W2"]
    )


def filter_to_dict(filt: Filter) -> dict:
    return {
        "A_K": filt.A_K.tolist(),
        "B_K": filt.B_K.tolist(),
        "C_K": filt.C_K.tolist(),
    }


def filter_from_dict(data: dict) -> Filter:
    return Filter(A_K=data["A_K"], B_K=data["B_K"], C_K=data["C_K"])


def save_json(obj: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def load_json(path) -> dict:
    with open(path) as f:
        return json.load(f)
