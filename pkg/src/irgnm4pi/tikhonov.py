"""Linear Tikhonov regularisation with componentwise nonnegativity.

Solves

    min_x  ||T x - y||^2 + alpha ||x - x0||^2   s.t.  x_i >= 0 for i in mask

with a primal-dual active set iteration (the semi-smooth Newton method for
this complementarity system). Each outer step solves the reduced normal
equations on the inactive set by conjugate gradients. The X metric is
Euclidean: callers with a different metric must whiten first.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "LinearProblem",
    "SsnConfig",
    "KktReport",
    "AdjointMismatch",
    "conjugate_gradient",
    "solve",
    "verify_stability",
    "verify_approximation",
    "verify_operator_perturbation",
    "StabilityCheck",
    "ApproximationTable",
    "PerturbationCheck",
]

log = logging.getLogger(__name__)

Apply = Callable[[np.ndarray], np.ndarray]


class AdjointMismatch(ValueError):
    """apply / apply_adjoint do not form an adjoint pair."""


@dataclass
class LinearProblem:
    apply: Apply
    apply_adjoint: Apply
    rhs: np.ndarray
    anchor: np.ndarray
    alpha: float
    constraint_mask: np.ndarray

    def __post_init__(self):
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.anchor = np.asarray(self.anchor, dtype=float)
        self.constraint_mask = np.asarray(self.constraint_mask, dtype=bool)
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.constraint_mask.shape != self.anchor.shape:
            raise ValueError("constraint_mask and anchor shapes differ")

    @classmethod
    def from_matrix(cls, T, rhs, anchor, alpha, constraint_mask=None):
        T = np.asarray(T, dtype=float)
        if constraint_mask is None:
            constraint_mask = np.ones(T.shape[1], dtype=bool)
        return cls(lambda x: T @ x, lambda y: T.T @ y, rhs, anchor, alpha, constraint_mask)

    @property
    def size(self) -> int:
        return self.anchor.size

    def normal(self, x: np.ndarray) -> np.ndarray:
        return self.apply_adjoint(self.apply(x)) + self.alpha * x

    def objective(self, x: np.ndarray) -> float:
        r = self.apply(x) - self.rhs
        d = x - self.anchor
        return float(r @ r + self.alpha * (d @ d))

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.constraint_mask, np.maximum(x, 0.0), x)

    def adjoint_mismatch(self, rng: np.random.Generator, trials: int = 2) -> float:
        worst = 0.0
        for _ in range(trials):
            x = rng.standard_normal(self.size)
            y = rng.standard_normal(self.rhs.shape)
            Tx, Tty = self.apply(x), self.apply_adjoint(y)
            scale = np.linalg.norm(Tx) * np.linalg.norm(y) + np.linalg.norm(x) * np.linalg.norm(Tty)
            if scale > 0:
                worst = max(worst, abs(Tx @ y - x @ Tty) / scale)
        return worst


@dataclass
class SsnConfig:
    complementarity_scale: float = 1.0
    max_outer: int = 100
    kkt_tol: float = 1e-8
    cg_tol: float = 1e-10
    cg_max: int = 2000
    adjoint_check: bool = True
    adjoint_tol: float = 1e-8

    def __post_init__(self):
        for name in ("complementarity_scale", "max_outer", "kkt_tol", "cg_tol", "cg_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SsnConfig.{name} must be positive")


@dataclass
class KktReport:
    stationarity_residual: float = 0.0
    complementarity_residual: float = 0.0
    feasibility_violation: float = 0.0
    outer_iters: int = 0
    total_cg_iters: int = 0
    converged: bool = True
    multiplier: Optional[np.ndarray] = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "stationarity_residual": self.stationarity_residual,
            "complementarity_residual": self.complementarity_residual,
            "feasibility_violation": self.feasibility_violation,
            "outer_iters": self.outer_iters,
            "total_cg_iters": self.total_cg_iters,
            "converged": self.converged,
        }


def conjugate_gradient(op: Apply, b: np.ndarray, x0: np.ndarray, tol: float,
                       maxiter: int) -> tuple[np.ndarray, int, float]:
    """CG for an SPD operator; stops when ||b - op(x)|| <= tol.

    ``tol`` is absolute. Returns the iterate, iteration count and final
    residual norm.
    """
    x = x0.copy()
    r = b - op(x)
    rr = r @ r
    if np.sqrt(rr) <= tol:
        return x, 0, float(np.sqrt(rr))
    p = r.copy()
    for it in range(1, maxiter + 1):
        Ap = op(p)
        pAp = p @ Ap
        if pAp <= 0:
            # loss of positive definiteness from round-off
            return x, it, float(np.sqrt(rr))
        a = rr / pAp
        x += a * p
        r -= a * Ap
        rr_new = r @ r
        if np.sqrt(rr_new) <= tol:
            return x, it, float(np.sqrt(rr_new))
        p *= rr_new / rr
        p += r
        rr = rr_new
    return x, maxiter, float(np.sqrt(rr))


def solve(problem: LinearProblem, cfg: SsnConfig | None = None,
          x_init: np.ndarray | None = None) -> tuple[np.ndarray, KktReport]:
    """Primal-dual active set solve of the constrained Tikhonov problem.

    A component i of the constrained block is active when
    ``mu_i - c x_i > 0``. Active components are clamped at zero and the
    multiplier is read off the residual there; the inactive block solves
    ``(T*T + alpha I) x = T*y + alpha x0`` by CG warm-started from the
    previous outer iterate.

    Full block exchanges are safeguarded in the spirit of Judice and Pires:
    when the number of sign-infeasible components stops decreasing for three
    consecutive steps, the solver switches to a primal feasible active set
    phase started from the best feasible iterate. That phase decreases the
    objective monotonically and cannot cycle. A repeated active set in the
    primal-dual phase first tightens the CG tolerance once and otherwise
    triggers the same switch. ``max_outer`` bounds the steps of both phases
    together; running out returns the best feasible iterate flagged as
    non-converged.
    """
    cfg = cfg or SsnConfig()
    p = problem
    if cfg.adjoint_check:
        mism = p.adjoint_mismatch(np.random.default_rng(0))
        if mism > cfg.adjoint_tol:
            raise AdjointMismatch(f"adjoint pair check failed: relative mismatch {mism:.3e}")

    mask = p.constraint_mask
    Tty = p.apply_adjoint(p.rhs)
    b = Tty + p.alpha * p.anchor
    scale = np.linalg.norm(Tty) + p.alpha * np.linalg.norm(p.anchor)
    n = p.size
    if scale == 0.0:
        zero = np.zeros(n)
        return zero, KktReport(multiplier=np.zeros(n))

    c = cfg.complementarity_scale
    cg_tol = cfg.cg_tol
    x = p.project(p.anchor if x_init is None else np.asarray(x_init, dtype=float))
    Ax = p.normal(x)
    mu = np.where(mask, Ax - b, 0.0)
    active = mask & (mu - c * x > 0)

    seen: set[bytes] = set()
    tightened = False
    best_infeasible = n + 1
    backup = 3
    total_cg = 0
    best_x, best_obj = None, np.inf
    stationarity = np.inf

    prev_key = b""
    outer = 0
    while outer < cfg.max_outer:
        outer += 1
        key = np.packbits(active).tobytes()
        if key != prev_key and key in seen:
            if tightened:
                log.info("active set repeated; switching to the primal feasible phase")
                break
            tightened = True
            cg_tol *= 1e-2
            seen.clear()
        seen.add(key)
        prev_key = key

        inactive = ~active
        x, its, _ = conjugate_gradient(lambda v: inactive * p.normal(inactive * v),
                                       inactive * b, inactive * x,
                                       cg_tol * scale, cfg.cg_max)
        total_cg += its
        x[active] = 0.0
        Ax = p.normal(x)
        resid = Ax - b
        mu = np.where(active, resid, 0.0)
        stationarity = float(np.linalg.norm(resid - mu))

        xf = p.project(x)
        obj = p.objective(xf)
        if obj < best_obj:
            best_x, best_obj = xf, obj

        bad_primal = mask & inactive & (x < 0)
        bad_dual = active & (mu <= 0)
        infeasible = np.flatnonzero(bad_primal | bad_dual)
        if infeasible.size == 0:
            if stationarity <= cfg.kkt_tol * scale:
                return x, KktReport(
                    stationarity_residual=stationarity,
                    complementarity_residual=float(np.max(np.abs(x * mu), initial=0.0)),
                    feasibility_violation=0.0,
                    outer_iters=outer,
                    total_cg_iters=total_cg,
                    converged=True,
                    multiplier=mu,
                )
            continue  # same active set, CG not yet tight enough

        if infeasible.size < best_infeasible:
            best_infeasible, backup = infeasible.size, 3
        elif backup > 0:
            backup -= 1
        else:
            log.info("active set stagnates; switching to the primal feasible phase")
            break
        active = mask & (mu - c * x > 0)

    start = best_x if best_x is not None else p.project(x)
    return _primal_phase(p, start, b, scale, cg_tol, cfg, outer, total_cg)


def _primal_phase(p: LinearProblem, x: np.ndarray, b: np.ndarray, scale: float,
                  cg_tol: float, cfg: SsnConfig, outer: int, total_cg: int
                  ) -> tuple[np.ndarray, KktReport]:
    """Feasible active set iteration: fix, solve on the free set, step, release.

    Every step lowers the objective, so no working set repeats. A step to
    the projection of the subspace minimiser is taken when it lowers the
    objective; otherwise the step stops at the first blocking bound.
    Components with a negative multiplier are released together; if that
    blocks at once, only the most negative one is released next time.
    """
    mask = p.constraint_mask

    def objective(v):
        return 0.5 * float(v @ p.normal(v)) - float(b @ v)

    x = p.project(x)
    fixed = mask & (x <= 0)
    x[fixed] = 0.0
    release_tol = cg_tol * scale
    single = False
    mu = np.zeros_like(x)
    stationarity = np.inf
    converged = False
    while outer < cfg.max_outer:
        outer += 1
        free = ~fixed
        z, its, _ = conjugate_gradient(lambda v: free * p.normal(free * v),
                                       free * b, free * x, cg_tol * scale, cfg.cg_max)
        total_cg += its
        z[fixed] = 0.0
        blocking = np.flatnonzero(mask & free & (z < 0))
        if blocking.size:
            # Projected step first: many bounds may be hit at once.
            zp = np.where(mask, np.maximum(z, 0.0), z)
            if objective(zp) < objective(x):
                x = zp
                fixed |= mask & (x <= 0)
                continue
            xb, zb = x[blocking], z[blocking]
            ratios = xb / (xb - zb)
            t = float(ratios.min())
            x = x + t * (z - x)
            hit = blocking[ratios <= t]
            x[hit] = 0.0
            x[mask & (x < 0)] = 0.0
            fixed |= mask & (x <= 0)
            single = single or t == 0.0
            continue
        x = z
        grad = p.normal(x) - b
        mu = np.where(fixed, grad, 0.0)
        stationarity = float(np.linalg.norm(grad - np.maximum(mu, 0.0)))
        neg = np.flatnonzero(fixed & (grad < -release_tol))
        if neg.size == 0:
            converged = stationarity <= cfg.kkt_tol * scale
            if converged:
                break
            continue
        if single:
            neg = neg[[int(np.argmin(grad[neg]))]]
            single = False
        fixed[neg] = False
    else:
        grad = p.normal(x) - b
        mu = np.where(fixed, grad, 0.0)
        stationarity = float(np.linalg.norm(grad - np.maximum(mu, 0.0)))
    mu = np.maximum(mu, 0.0)
    return x, KktReport(
        stationarity_residual=stationarity,
        complementarity_residual=float(np.max(np.abs(x * mu), initial=0.0)),
        feasibility_violation=float(max(0.0, -np.min(np.where(mask, x, 0.0), initial=0.0))),
        outer_iters=outer,
        total_cg_iters=total_cg,
        converged=converged,
        multiplier=mu,
    )


@dataclass
class StabilityCheck:
    x1: np.ndarray
    x2: np.ndarray
    distance: float
    bound: float
    holds: bool


def verify_stability(T, y1, y2, x0, alpha, cfg: SsnConfig | None = None,
                     constraint_mask=None, slack: float = 1e-10) -> StabilityCheck:
    """Check ``||x1 - x2|| <= ||y1 - y2|| / alpha`` for two right-hand sides.

    ``T`` is a dense matrix or a pair ``(apply, apply_adjoint)``.
    """
    x1 = solve(_make_problem(T, y1, x0, alpha, constraint_mask), cfg)[0]
    x2 = solve(_make_problem(T, y2, x0, alpha, constraint_mask), cfg)[0]
    dist = float(np.linalg.norm(x1 - x2))
    bound = float(np.linalg.norm(np.asarray(y1) - np.asarray(y2)) / alpha)
    return StabilityCheck(x1, x2, dist, bound, dist <= bound * (1 + slack))


@dataclass
class PerturbationCheck:
    x1: np.ndarray
    x2: np.ndarray
    distance: float
    bound: float
    holds: bool


def verify_operator_perturbation(T1, T2, omega, x0, alpha: float, cfg: SsnConfig | None = None,
                                 constraint_mask=None, operator_distance: float | None = None,
                                 slack: float = 1e-8) -> PerturbationCheck:
    """Sensitivity of the constrained minimiser to the operator.

    With ``x_ref = P_C(T2* omega + x0)`` and ``x_i`` minimising
    ``||T_i (x - x_ref)||^2 + alpha ||x - x0||^2`` over C, checks
    ``||x1 - x2|| <= sqrt(3/2) ||omega|| ||T1 - T2||``, a bound that does not
    depend on alpha. ``operator_distance`` is ``||T1 - T2||``; it is computed
    exactly when both operators are dense matrices.
    """
    if operator_distance is None:
        if isinstance(T1, tuple) or isinstance(T2, tuple):
            raise ValueError("operator_distance is required for matrix-free operators")
        operator_distance = float(np.linalg.norm(np.asarray(T1, float) - np.asarray(T2, float), 2))
    apply1, adjoint1 = _as_pair(T1)
    apply2, adjoint2 = _as_pair(T2)
    omega = np.asarray(omega, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    mask = np.ones(x0.shape, bool) if constraint_mask is None else np.asarray(constraint_mask, bool)
    z = adjoint2(omega) + x0
    x_ref = np.where(mask, np.maximum(z, 0.0), z)
    x1 = solve(LinearProblem(apply1, adjoint1, apply1(x_ref), x0, alpha, mask), cfg, x_init=x_ref)[0]
    x2 = solve(LinearProblem(apply2, adjoint2, apply2(x_ref), x0, alpha, mask), cfg, x_init=x_ref)[0]
    dist = float(np.linalg.norm(x1 - x2))
    bound = math.sqrt(1.5) * float(np.linalg.norm(omega)) * operator_distance
    return PerturbationCheck(x1, x2, dist, bound, dist <= bound * (1 + slack))


@dataclass
class ApproximationTable:
    alphas: np.ndarray
    errors: np.ndarray
    residuals: np.ndarray
    x_true: np.ndarray
    omega_norm: float

    @property
    def error_ratios(self) -> np.ndarray:
        """``||x_alpha - x_true|| / (sqrt(alpha) ||omega||)``; at most one in theory."""
        return self.errors / (np.sqrt(self.alphas) * self.omega_norm)

    @property
    def residual_ratios(self) -> np.ndarray:
        return self.residuals / (self.alphas * self.omega_norm)

    def holds(self, slack: float = 1e-6) -> bool:
        return bool(np.all(self.error_ratios <= 1 + slack) and np.all(self.residual_ratios <= 1 + slack))


def verify_approximation(T, omega, x0, alpha_list: Sequence[float], cfg: SsnConfig | None = None,
                         constraint_mask=None) -> ApproximationTable:
    """Errors of exact-data Tikhonov solutions under a projected source condition.

    Builds ``x_true = P_C(T* omega + x0)`` and ``g = T x_true`` and solves for
    every alpha in ``alpha_list``.
    """
    apply, adjoint = _as_pair(T)
    omega = np.asarray(omega, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    mask = np.ones(x0.shape, bool) if constraint_mask is None else np.asarray(constraint_mask, bool)
    z = adjoint(omega) + x0
    x_true = np.where(mask, np.maximum(z, 0.0), z)
    g = apply(x_true)
    alphas = np.asarray(alpha_list, dtype=float)
    errs, res = [], []
    for a in alphas:
        xa = solve(LinearProblem(apply, adjoint, g, x0, a, mask), cfg, x_init=x_true)[0]
        errs.append(np.linalg.norm(xa - x_true))
        res.append(np.linalg.norm(apply(xa) - g))
    return ApproximationTable(alphas, np.array(errs), np.array(res), x_true,
                              float(np.linalg.norm(omega)))


def _as_pair(T):
    if isinstance(T, tuple):
        return T
    T = np.asarray(T, dtype=float)
    return (lambda x: T @ x), (lambda y: T.T @ y)


def _make_problem(T, y, x0, alpha, mask):
    apply, adjoint = _as_pair(T)
    x0 = np.asarray(x0, dtype=float)
    mask = np.ones(x0.shape, bool) if mask is None else mask
    return LinearProblem(apply, adjoint, y, x0, alpha, mask)
