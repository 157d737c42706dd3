"""Iteratively regularised Gauss-Newton method with convex constraints.

Each step linearises the forward operator at the current iterate and solves
a nonnegativity-constrained Tikhonov problem anchored at the initial guess,
with a geometrically decreasing regularisation parameter. Two baselines are
available for comparison: the unconstrained iteration and the unconstrained
step followed by projection onto the constraint set.
"""
from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tikhonov
from .tikhonov import LinearProblem, SsnConfig

__all__ = [
    "ForwardOperator",
    "Linearization",
    "IrgnmConfig",
    "IrgnmTrace",
    "TraceRow",
    "NoiseBudget",
    "IrgnmDivergence",
    "OperatorDiagnostics",
    "run",
    "stopping_index",
    "combined_noise",
    "check_operator",
    "VARIANTS",
]

log = logging.getLogger(__name__)

VARIANTS = ("constrained", "unconstrained", "projected")


@dataclass
class Linearization:
    value: np.ndarray
    apply: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]


class ForwardOperator(ABC):
    """Differentiable map on Euclidean coordinates.

    Subclasses provide ``constraint_mask`` (components constrained to be
    nonnegative) and the three evaluation methods. ``linearize`` may be
    overridden to share work between the value and the derivative.
    """

    constraint_mask: np.ndarray

    @abstractmethod
    def evaluate(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def derivative_apply(self, x: np.ndarray, h: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def derivative_adjoint(self, x: np.ndarray, g: np.ndarray) -> np.ndarray: ...

    def linearize(self, x: np.ndarray) -> Linearization:
        return Linearization(self.evaluate(x),
                             lambda h: self.derivative_apply(x, h),
                             lambda g: self.derivative_adjoint(x, g))

    def data_inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.vdot(a, b).real)

    def errors(self, x: np.ndarray, truth) -> tuple[float, float, float]:
        """(total, object, phase) error against ``truth``; phase is nan if absent."""
        e = float(np.linalg.norm(x - truth))
        return e, e, math.nan

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.constraint_mask, np.maximum(x, 0.0), x)


@dataclass(frozen=True)
class NoiseBudget:
    delta_g: float = 0.0
    delta_F: float = 0.0
    delta_Fprime: float = 0.0

    def __post_init__(self):
        if min(self.delta_g, self.delta_F, self.delta_Fprime) < 0:
            raise ValueError("noise levels must be nonnegative")

    @property
    def delta_bar(self) -> float:
        return combined_noise(self)


def combined_noise(budget: NoiseBudget) -> float:
    """max(delta_g + delta_F, delta_F'^2)."""
    if min(budget.delta_g, budget.delta_F, budget.delta_Fprime) < 0:
        raise ValueError("noise levels must be nonnegative")
    return max(budget.delta_g + budget.delta_F, budget.delta_Fprime ** 2)


def stopping_index(alphas: Sequence[float], eta: float, delta_bar: float) -> int:
    """First N with alpha_N < eta * delta_bar (so alpha_n >= eta * delta_bar for n < N).

    Raises ``ValueError`` when ``delta_bar == 0`` (noise-free runs have no
    finite index) or when no listed alpha falls below the threshold.
    """
    if delta_bar == 0:
        raise ValueError("delta_bar = 0: noise-free mode has no finite stopping index")
    if eta <= 0 or delta_bar < 0:
        raise ValueError("eta and delta_bar must be positive")
    a = np.asarray(alphas, dtype=float)
    if np.any(np.diff(a) >= 0):
        raise ValueError("alphas must be strictly decreasing")
    below = np.flatnonzero(a < eta * delta_bar)
    if below.size == 0:
        raise ValueError("threshold not reached by the given alphas")
    return int(below[0])


@dataclass
class IrgnmConfig:
    alpha0: float = 1.0
    decay: float = 2.0 / 3.0
    eta: float = 1.0
    delta_bar: float = 0.0
    max_iters: int = 20
    variant: str = "constrained"
    ssn: SsnConfig = field(default_factory=SsnConfig)

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.delta_bar < 0:
            raise ValueError("delta_bar must be nonnegative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    def alpha(self, n: int) -> float:
        return self.alpha0 * self.decay ** n


@dataclass
class TraceRow:
    n: int
    alpha: float
    residual: float
    obj_error: float = math.nan
    phase_error: float = math.nan
    theta: float = math.nan
    ssn_iters: int = 0
    cg_iters: int = 0
    ssn_converged: bool = True


TRACE_COLUMNS = ("n", "alpha", "residual", "obj_error", "phase_error", "theta",
                 "ssn_iters", "cg_iters", "ssn_converged")


@dataclass
class IrgnmTrace:
    rows: list[TraceRow] = field(default_factory=list)
    stop_index: int = 0
    stop_reason: str = ""
    kkt_reports: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    @property
    def alphas(self) -> np.ndarray:
        return self.column("alpha")

    def to_tsv(self) -> str:
        lines = ["\t".join(TRACE_COLUMNS)]
        for r in self.rows:
            vals = [getattr(r, c) for c in TRACE_COLUMNS]
            lines.append("\t".join(_fmt(v) for v in vals))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "IrgnmTrace":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        header = lines[0].split("\t")
        rows = []
        for ln in lines[1:]:
            rec = dict(zip(header, ln.split("\t")))
            rows.append(TraceRow(
                n=int(rec["n"]), alpha=float(rec["alpha"]), residual=float(rec["residual"]),
                obj_error=float(rec["obj_error"]), phase_error=float(rec["phase_error"]),
                theta=float(rec["theta"]), ssn_iters=int(rec["ssn_iters"]),
                cg_iters=int(rec["cg_iters"]), ssn_converged=bool(int(rec["ssn_converged"]))))
        trace = cls(rows)
        trace.stop_index = rows[-1].n if rows else 0
        return trace


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class IrgnmDivergence(RuntimeError):
    def __init__(self, msg: str, trace: IrgnmTrace):
        super().__init__(msg)
        self.trace = trace


def run(op: ForwardOperator, g_delta: np.ndarray, x0: np.ndarray, cfg: IrgnmConfig,
        truth=None, callback: Callable[[int, np.ndarray], None] | None = None,
        ) -> tuple[np.ndarray, IrgnmTrace]:
    """Run the IRGNM from ``x0`` until the a-priori stopping rule fires.

    With ``cfg.delta_bar > 0`` the iteration stops at the first N with
    ``alpha_N < eta * delta_bar``; in noise-free mode it runs ``max_iters``
    steps. The inner solve of each step is warm-started at the current
    iterate and anchored at ``x0``. If ``truth`` is given the trace records
    errors via ``op.errors`` and the diagnostic ``||e_n|| / sqrt(alpha_n)``.
    """
    x0 = np.asarray(x0, dtype=float)
    mask = np.asarray(op.constraint_mask, dtype=bool)
    if np.any(x0[mask] < 0):
        raise ValueError("initial guess must be feasible")
    g_delta = np.asarray(g_delta, dtype=float)
    solve_mask = mask if cfg.variant == "constrained" else np.zeros_like(mask)

    trace = IrgnmTrace()
    x = x0.copy()
    lin = op.linearize(x)
    ssn_iters = cg_iters = 0
    ssn_ok = True
    n = 0
    while True:
        alpha = cfg.alpha(n)
        r = lin.value - g_delta
        resid = math.sqrt(max(op.data_inner(r, r), 0.0))
        row = TraceRow(n=n, alpha=alpha, residual=resid, ssn_iters=ssn_iters,
                       cg_iters=cg_iters, ssn_converged=ssn_ok)
        if truth is not None:
            total, eo, ep = op.errors(x, truth)
            row.obj_error, row.phase_error = eo, ep
            row.theta = total / math.sqrt(alpha)
        trace.rows.append(row)
        if not math.isfinite(resid):
            trace.stop_index, trace.stop_reason = n, "non-finite residual"
            raise IrgnmDivergence(f"non-finite residual at iteration {n}", trace)
        if callback is not None:
            callback(n, x)

        if cfg.delta_bar > 0 and alpha < cfg.eta * cfg.delta_bar:
            trace.stop_index, trace.stop_reason = n, "stopping rule"
            break
        if n >= cfg.max_iters:
            trace.stop_index, trace.stop_reason = n, "max_iters"
            break

        rhs = g_delta - lin.value + lin.apply(x)
        problem = LinearProblem(lin.apply, lin.adjoint, rhs, x0, alpha, solve_mask)
        x_new, report = tikhonov.solve(problem, cfg.ssn, x_init=x)
        if not report.converged:
            log.warning("inner solver did not converge at IRGNM step %d", n)
        if cfg.variant == "projected":
            x_new = op.project(x_new)
        trace.kkt_reports.append(report.as_dict())
        ssn_iters, cg_iters, ssn_ok = report.outer_iters, report.total_cg_iters, report.converged
        x = x_new
        lin = op.linearize(x)
        n += 1
    return x, trace


@dataclass
class OperatorDiagnostics:
    adjoint_mismatch: float
    taylor_order: float
    steps: np.ndarray
    remainders: np.ndarray


def check_operator(op: ForwardOperator, x: np.ndarray, trials: int = 5,
                   rng: np.random.Generator | None = None, direction: np.ndarray | None = None,
                   steps: Sequence[float] | None = None) -> OperatorDiagnostics:
    """Adjoint pairing test and dyadic Taylor-remainder order at ``x``.

    The order is the log-log slope of ``||F(x+th) - F(x) - t F'[x]h||``
    against ``t`` over steps whose remainder is well above round-off; a
    remainder at round-off level everywhere (linear operator) gives ``inf``.
    """
    rng = rng or np.random.default_rng(0)
    lin = op.linearize(x)
    worst = 0.0
    for _ in range(trials):
        h = rng.standard_normal(x.shape)
        g = rng.standard_normal(lin.value.shape)
        Jh, Jtg = lin.apply(h), lin.adjoint(g)
        lhs, rhs = op.data_inner(Jh, g), float(h @ Jtg)
        scale = np.linalg.norm(h) * np.linalg.norm(g) * max(1.0, np.linalg.norm(Jh) / np.linalg.norm(h))
        worst = max(worst, abs(lhs - rhs) / scale)

    h = rng.standard_normal(x.shape) if direction is None else np.asarray(direction, float)
    h = h / np.linalg.norm(h)
    ts = np.asarray(steps if steps is not None else 2.0 ** -np.arange(2, 14), dtype=float)
    Jh = lin.apply(h)
    rem = np.array([np.linalg.norm(op.evaluate(x + t * h) - lin.value - t * Jh) for t in ts])
    floor = 1e3 * np.finfo(float).eps * max(np.linalg.norm(lin.value), np.linalg.norm(Jh), 1e-300)
    ok = rem > floor
    if ok.sum() < 3:
        order = math.inf
    else:
        order = float(np.polyfit(np.log(ts[ok]), np.log(rem[ok]), 1)[0])
    return OperatorDiagnostics(worst, order, ts, rem)
