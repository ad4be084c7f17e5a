"""Optimizer family for direct filter search.

Five algorithms share one iteration engine:

* ``plain-gd``          backtracking gradient descent on the estimation loss
* ``gd-recond``         the same, with filter-state reconditioning before
                        each gradient step
* ``irpg-fixed``        reconditioned descent on the informativity-regularized
                        loss with a fixed step size
* ``irpg-backtrack``    the same with backtracking constrained to keep
                        (1/2) I <= Sigma22 <= (3/2) I
* ``minimality-gd``     backtracking descent on the estimation loss plus
                        Gramian-based controllability/observability penalties

All methods terminate when the gradient norm of the objective falls below
``grad_tol``, when the chosen step stays below ``step_tol`` for
``step_tol_patience`` consecutive iterations, or at ``max_iters``.  The
regularized methods optionally set the regularization weight to zero once
steps collapse (``lambda_turnoff``), which lets the output map C_K finish
converging unimpeded.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import lyap
from .errors import NotControllable, NotInformative, NotStable
from .gradients import (
    FD_GRAD_STEP,
    Gradient,
    apply_step,
    fd_gradient,
    grad_info_from_state,
    grad_oe_from_state,
)
from .model import (
    Filter,
    OEInstance,
    StationaryState,
    _loss_oe_from_state,
    kalman,
    recondition,
    reg_ctrb,
    reg_info,
    reg_obs,
    similarity,
    stationary,
)
from .linalg import spd_inv_sqrt

PLAIN_GD = "plain-gd"
GD_RECOND = "gd-recond"
IRPG_FIXED = "irpg-fixed"
IRPG_BACKTRACK = "irpg-backtrack"
MINIMALITY_GD = "minimality-gd"
ALGORITHMS = (PLAIN_GD, GD_RECOND, IRPG_FIXED, IRPG_BACKTRACK, MINIMALITY_GD)

TERM_GRAD_TOL = "grad-tol"
TERM_STEP_TOL = "step-tol"
TERM_MAX_ITERS = "max-iters"
TERM_INFEASIBLE = "infeasible-start"

# Conditioning window enforced by the constrained line search.
COND_LO = 0.5
COND_HI = 1.5
# Relative loss slack within which line-search candidates tie; the largest
# feasible step among ties is taken.
TIE_SLACK = 1e-14

CSV_HEADER = (
    "iter,loss_oe,loss_reg,loss_total,grad_norm,step,"
    "sigma_min_12,sigma_min_22,subopt_norm"
)


def default_backtrack_steps() -> tuple[float, ...]:
    """Geometric step grid {1, 1/2, ..., 2^-60} plus the mandatory 0."""
    return tuple(2.0**-k for k in range(61)) + (0.0,)


@dataclass
class OptimizerConfig:
    algorithm: str = IRPG_BACKTRACK
    lam: float = 1e-4
    mu_ctrb: float = 1e-2
    mu_obs: float = 1e-2
    eta: float = 1e-2
    backtrack_steps: tuple[float, ...] = field(default_factory=default_backtrack_steps)
    grad_tol: float = 1e-8
    step_tol: float = 1e-16
    step_tol_patience: int = 3
    max_iters: int = 100_000
    lambda_turnoff: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.lam < 0 or self.mu_ctrb < 0 or self.mu_obs < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        steps = tuple(float(s) for s in self.backtrack_steps)
        if 0.0 not in steps:
            raise ValueError("backtrack_steps must contain 0")
        if any(s < 0 for s in steps):
            raise ValueError("backtrack_steps must be nonnegative")
        self.backtrack_steps = steps
        if min(self.grad_tol, self.step_tol) <= 0 or self.step_tol_patience < 1:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class IterationRecord:
    iter: int
    loss_oe: float
    loss_reg: float
    loss_total: float
    grad_norm: float
    step: float
    sigma_min_12: float
    sigma_min_22: float
    subopt_norm: float
    region: Optional[str] = None


@dataclass
class RunResult:
    records: list[IterationRecord]
    final_filter: Filter
    termination: str


@dataclass
class _Eval:
    """Objective pieces at one filter (extended-real)."""

    state: Optional[StationaryState]
    loss_oe: float
    loss_reg: float
    total: float
    feasible: bool


class _Engine:
    """Per-run workspace: precomputed instance covariance, optimal loss,
    and the algorithm-specific objective."""

    def __init__(self, instance: OEInstance, cfg: OptimizerConfig):
        self.instance = instance
        self.cfg = cfg
        self.alg = cfg.algorithm
        self.recond = self.alg in (GD_RECOND, IRPG_FIXED, IRPG_BACKTRACK)
        self.conditioned = self.alg in (IRPG_FIXED, IRPG_BACKTRACK)
        self.lam = cfg.lam if self.alg in (IRPG_FIXED, IRPG_BACKTRACK) else 0.0
        self.sigma11 = lyap.clyap(instance.A, instance.W1)
        opt_filter, _ = kalman(instance)
        self.loss_star = _loss_oe_from_state(
            stationary(instance, opt_filter, sigma11=self.sigma11),
            instance.G,
            opt_filter.C_K,
        )
        self.track_region = (
            self.alg == MINIMALITY_GD
            and instance.n == 2
            and instance.m == 1
            and instance.p == 1
        )

    def evaluate(self, filt: Filter) -> _Eval:
        try:
            state = stationary(self.instance, filt, sigma11=self.sigma11)
        except NotStable:
            return _Eval(None, math.inf, math.inf, math.inf, False)
        base = _loss_oe_from_state(state, self.instance.G, filt.C_K)
        if self.alg == MINIMALITY_GD:
            reg = self.cfg.mu_ctrb * reg_ctrb(filt) + self.cfg.mu_obs * reg_obs(filt)
            total = base + reg
            return _Eval(state, base, reg, total, math.isfinite(total))
        reg = reg_info(state)
        if self.lam > 0:
            total = base + self.lam * reg
            return _Eval(state, base, reg, total, math.isfinite(total))
        # Unregularized objective; reconditioning methods still need the
        # iterate to stay controllable for the next normalization.
        feasible = state.controllable if self.recond else True
        return _Eval(state, base, reg, base, feasible)

    def gradient(self, filt: Filter, ev: _Eval) -> Gradient:
        g = grad_oe_from_state(self.instance, filt, ev.state)
        if self.alg == MINIMALITY_GD and (self.cfg.mu_ctrb > 0 or self.cfg.mu_obs > 0):
            h = FD_GRAD_STEP * (1.0 + filt.params_norm())
            penalty = lambda k: (
                self.cfg.mu_ctrb * reg_ctrb(k) + self.cfg.mu_obs * reg_obs(k)
            )
            g = g.plus(fd_gradient(penalty, filt, h))
        elif self.lam > 0:
            g = g.plus(grad_info_from_state(self.instance, filt, ev.state).scaled(self.lam))
        return g

    def line_search(
        self, base: Filter, base_eval: _Eval, grad: Gradient
    ) -> tuple[Filter, float, _Eval]:
        """Pick the loss-minimizing feasible step; ties go to the largest."""
        candidates: list[tuple[float, float, Filter, _Eval]] = []
        for eta in self.cfg.backtrack_steps:
            if eta == 0.0:
                candidates.append((0.0, base_eval.total, base, base_eval))
                continue
            trial = apply_step(base, grad, eta)
            if not lyap.is_hurwitz(trial.A_K):
                continue
            ev = self.evaluate(trial)
            if not ev.feasible:
                continue
            if self.conditioned and not (
                ev.state.eig22_min >= COND_LO and ev.state.eig22_max <= COND_HI
            ):
                continue
            candidates.append((eta, ev.total, trial, ev))
        best_loss = min(c[1] for c in candidates)
        slack = TIE_SLACK * (1.0 + abs(best_loss))
        eta, _, trial, ev = max(
            (c for c in candidates if c[1] <= best_loss + slack), key=lambda c: c[0]
        )
        return trial, eta, ev

    def subopt(self, value: float) -> float:
        return (value - self.loss_star) / self.loss_star


def _infeasible(init: Filter) -> RunResult:
    return RunResult(records=[], final_filter=init, termination=TERM_INFEASIBLE)


def _start_is_feasible(engine: _Engine, init: Filter) -> bool:
    if not lyap.is_hurwitz(init.A_K):
        return False
    ev = engine.evaluate(init)
    if engine.alg in (IRPG_FIXED, IRPG_BACKTRACK):
        return ev.state is not None and ev.state.informative
    if engine.alg == GD_RECOND:
        return ev.state is not None and ev.state.controllable
    if engine.alg == MINIMALITY_GD:
        return ev.feasible
    return True


def run(instance: OEInstance, init: Filter, cfg: OptimizerConfig) -> RunResult:
    """Run the configured algorithm from ``init`` and log every iteration.

    Infeasible starting points (unstable; non-informative for the
    regularized methods; uncontrollable for reconditioning ones) yield an
    empty ``infeasible-start`` result.  A mid-run loss of feasibility,
    possible only under ``irpg-fixed`` with an overlarge step, terminates
    the same way while keeping the records so far.
    """
    engine = _Engine(instance, cfg)
    if not _start_is_feasible(engine, init):
        return _infeasible(init)

    records: list[IterationRecord] = []
    current = init
    termination = TERM_MAX_ITERS
    patience = 0

    for t in range(cfg.max_iters):
        try:
            if engine.recond:
                state = stationary(instance, current, sigma11=engine.sigma11)
                if not state.controllable:
                    raise NotControllable("iterate left the controllable set")
                current = similarity(current, spd_inv_sqrt(state.Sigma22))
            ev = engine.evaluate(current)
            if not ev.feasible:
                raise NotInformative("iterate left the feasible set")
            grad = engine.gradient(current, ev)
        except (NotStable, NotControllable, NotInformative):
            termination = TERM_INFEASIBLE
            break

        rec = IterationRecord(
            iter=t,
            loss_oe=ev.loss_oe,
            loss_reg=ev.loss_reg,
            loss_total=ev.total,
            grad_norm=grad.norm(),
            step=0.0,
            sigma_min_12=ev.state.sigma12_min,
            sigma_min_22=ev.state.sigma22_min,
            subopt_norm=engine.subopt(ev.loss_oe),
            region=_safe_region(current) if engine.track_region else None,
        )
        records.append(rec)

        if rec.grad_norm < cfg.grad_tol:
            termination = TERM_GRAD_TOL
            break

        if engine.alg == IRPG_FIXED:
            current = apply_step(current, grad, cfg.eta)
            step = cfg.eta
        else:
            current, step, _ = engine.line_search(current, ev, grad)
        rec.step = step

        if step < cfg.step_tol:
            if cfg.lambda_turnoff and engine.lam > 0:
                engine.lam = 0.0
                patience = 0
            else:
                patience += 1
                if patience >= cfg.step_tol_patience:
                    termination = TERM_STEP_TOL
                    break
        else:
            patience = 0

    return RunResult(records=records, final_filter=current, termination=termination)


def _safe_region(filt: Filter) -> Optional[str]:
    from .model import region_classify

    try:
        return region_classify(filt)
    except Exception:
        return None


def run_minimality(instance: OEInstance, init: Filter, cfg: OptimizerConfig) -> RunResult:
    """Backtracking descent on the minimality-regularized estimation loss."""
    if cfg.algorithm != MINIMALITY_GD:
        cfg = replace(cfg, algorithm=MINIMALITY_GD)
    return run(instance, init, cfg)


def step_irpg_fixed(instance: OEInstance, filt: Filter, lam: float, eta: float) -> Filter:
    """One fixed-step update: recondition, then descend the regularized loss."""
    state = stationary(instance, filt)
    if not state.informative:
        raise NotInformative("filter is not informative")
    tilde = recondition(instance, filt)
    state = stationary(instance, tilde)
    g = grad_oe_from_state(instance, tilde, state)
    if lam > 0:
        g = g.plus(grad_info_from_state(instance, tilde, state).scaled(lam))
    return apply_step(tilde, g, eta)


def step_irpg_backtrack(
    instance: OEInstance,
    filt: Filter,
    lam: float,
    steps: Optional[tuple[float, ...]] = None,
) -> tuple[Filter, float]:
    """One backtracking update under the Sigma22 conditioning constraint.

    Returns the new filter and the chosen step size.
    """
    state = stationary(instance, filt)
    if not state.informative:
        raise NotInformative("filter is not informative")
    cfg = OptimizerConfig(
        algorithm=IRPG_BACKTRACK,
        lam=lam,
        backtrack_steps=steps if steps is not None else default_backtrack_steps(),
    )
    engine = _Engine(instance, cfg)
    tilde = recondition(instance, filt)
    ev = engine.evaluate(tilde)
    grad = engine.gradient(tilde, ev)
    new, eta, _ = engine.line_search(tilde, ev, grad)
    return new, eta


# ---------------------------------------------------------------------------
# Serialization


def _fmt(x: float) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf"
    return repr(x)


def records_to_csv(result: RunResult) -> str:
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for r in result.records:
        out.write(
            ",".join(
                [
                    str(r.iter),
                    _fmt(r.loss_oe),
                    _fmt(r.loss_reg),
                    _fmt(r.loss_total),
                    _fmt(r.grad_norm),
                    _fmt(r.step),
                    _fmt(r.sigma_min_12),
                    _fmt(r.sigma_min_22),
                    _fmt(r.subopt_norm),
                ]
            )
            + "\n"
        )
    return out.getvalue()


def result_summary(result: RunResult, instance: OEInstance) -> dict:
    from .model import filter_to_dict, normalized_suboptimality

    if result.records:
        final_subopt = normalized_suboptimality(instance, result.final_filter)
    else:
        final_subopt = math.inf
    return {
        "termination": result.termination,
        "iters": len(result.records),
        "final_subopt": final_subopt,
        "final_filter": filter_to_dict(result.final_filter),
    }
