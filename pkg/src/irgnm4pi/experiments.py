"""Rate and bound experiments on the toy problems.

Each function returns a plain dict of results (arrays as lists) so that
the CLI can log it and tests can assert on it.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Sequence

import numpy as np

from . import irgnm, tikhonov
from .tikhonov import SsnConfig
from .toys import (ToySpec, build_linear_toy, build_nonlinear_toy, measure_rate, perturb)

__all__ = [
    "LINEAR_TOY",
    "NONLINEAR_TOY",
    "derive_seeds",
    "linear_rate",
    "noise_free_rate",
    "noisy_sweep",
    "operator_perturbation_trials",
    "stability_trials",
]

# Gain 1 keeps the alpha window of the linear sweep well inside the spectrum;
# the nonlinear runs use a stronger blur gain so that alpha_n << ||T||^2 over
# the fitted iterations, with rho small enough for the source fixed point to
# contract (2 beta rho gain^2 < 1).
LINEAR_TOY = ToySpec()
NONLINEAR_TOY = ToySpec(beta=0.05, gain=10.0, rho=0.05)


def derive_seeds(master: int, count: int) -> list[int]:
    """Independent per-run seeds derived deterministically from ``master``."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master).spawn(count)]


def linear_rate(spec: ToySpec = LINEAR_TOY, alphas: Sequence[float] | None = None,
                ssn: SsnConfig | None = None, slack: float = 1e-6) -> dict:
    """Tikhonov error versus alpha on the linear toy, with a log-log slope fit."""
    alphas = np.logspace(-6, -1, 21) if alphas is None else np.asarray(alphas, float)
    prob = build_linear_toy(spec)
    table = tikhonov.verify_approximation(prob.operator.T, prob.omega, prob.anchor, alphas,
                                          ssn, prob.operator.constraint_mask)
    fit = measure_rate(table.errors, alphas)
    return {
        "alphas": alphas.tolist(),
        "errors": table.errors.tolist(),
        "residuals": table.residuals.tolist(),
        "error_ratios": table.error_ratios.tolist(),
        "residual_ratios": table.residual_ratios.tolist(),
        "slope": fit.slope,
        "intercept": fit.intercept,
        "fit_residual": fit.residual,
        "bound_holds": table.holds(slack),
        "active_fraction": float(np.mean(table.x_true == 0)),
    }


def noise_free_rate(spec: ToySpec = NONLINEAR_TOY, iterations: int = 20,
                    window: tuple[int, int] = (3, 18), alpha0: float = 1.0,
                    decay: float = 2.0 / 3.0, ssn: SsnConfig | None = None) -> dict:
    """Constrained IRGNM on exact data; slope of ||x_n - x_true|| against sqrt(alpha_n)."""
    prob = build_nonlinear_toy(spec)
    cfg = irgnm.IrgnmConfig(alpha0=alpha0, decay=decay, max_iters=iterations,
                            ssn=ssn or SsnConfig())
    _, trace = irgnm.run(prob.operator, prob.data, prob.anchor, cfg, truth=prob.x_true)
    errs, alphas = trace.column("obj_error"), trace.alphas
    lo, hi = window
    fit = measure_rate(errs[lo:hi + 1], np.sqrt(alphas[lo:hi + 1]))
    return {
        "trace": trace,
        "errors": errs.tolist(),
        "alphas": alphas.tolist(),
        "theta": trace.column("theta").tolist(),
        "slope": fit.slope,
        "intercept": fit.intercept,
        "fit_residual": fit.residual,
        "window": [lo, hi],
        "fixed_point_iters": prob.fixed_point_iters,
        "inner_converged": bool(all(r["converged"] for r in trace.kkt_reports)),
    }


def _sweep_one(prob, delta_bar, split, eta, seed, alpha0, decay, max_iters, ssn):
    fg, fF, fFp = split
    noisy = perturb(prob, delta_g=fg * delta_bar, delta_F=fF * delta_bar,
                    delta_Fprime=fFp * math.sqrt(delta_bar), seed=seed)
    budget = irgnm.NoiseBudget(**noisy.noise)
    cfg = irgnm.IrgnmConfig(alpha0=alpha0, decay=decay, eta=eta, delta_bar=budget.delta_bar,
                            max_iters=max_iters, ssn=ssn or SsnConfig())
    x, trace = irgnm.run(noisy.operator, noisy.data, noisy.anchor, cfg, truth=prob.x_true)
    return float(np.linalg.norm(x - prob.x_true)), trace.stop_index, budget.delta_bar


def noisy_sweep(spec: ToySpec = NONLINEAR_TOY, delta_bars: Sequence[float] | None = None,
                eta: float = 1.0, seed: int = 0, split: tuple[float, float, float] = (0.5, 0.5, 0.5),
                alpha0: float = 1.0, decay: float = 2.0 / 3.0, max_iters: int = 200,
                threads: int = 1, ssn: SsnConfig | None = None) -> dict:
    """Final error of the stopped IRGNM against the combined noise level.

    For a target level d the data error is ``split[0] d``, the operator value
    error ``split[1] d`` and the derivative error ``split[2] sqrt(d)``, so that
    the combined level is exactly d. Runs are independent, may execute on
    ``threads`` workers, and use seeds derived from ``seed``.
    """
    delta_bars = np.logspace(-5, -2, 7) if delta_bars is None else np.asarray(delta_bars, float)
    if split[0] + split[1] != 1.0 or split[2] > 1.0:
        raise ValueError("split must give delta_g + delta_F = d and delta_F' <= sqrt(d)")
    prob = build_nonlinear_toy(spec)
    seeds = derive_seeds(seed, len(delta_bars))
    args = [(prob, d, split, eta, s, alpha0, decay, max_iters, ssn) for d, s in zip(delta_bars, seeds)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: _sweep_one(*a), args))
    else:
        results = [_sweep_one(*a) for a in args]
    errors = [r[0] for r in results]
    combined = [r[2] for r in results]
    fit = measure_rate(errors, combined)
    return {
        "delta_bars": combined,
        "errors": errors,
        "stop_indices": [r[1] for r in results],
        "seeds": seeds,
        "slope": fit.slope,
        "intercept": fit.intercept,
        "fit_residual": fit.residual,
    }


def operator_perturbation_trials(spec: ToySpec = LINEAR_TOY, n_trials: int = 50,
                                 alpha_range: tuple[float, float] = (1e-6, 1.0),
                                 level_range: tuple[float, float] = (1e-3, 1e-1),
                                 seed: int = 0, slack: float = 1e-8,
                                 ssn: SsnConfig | None = None) -> dict:
    """Sensitivity bound under calibrated operator perturbations, log-uniform alpha and level."""
    prob = build_linear_toy(spec)
    rng = np.random.default_rng(seed)
    seeds = derive_seeds(seed, n_trials)
    T2 = prob.operator.T
    rows = []
    for k in range(n_trials):
        alpha = 10 ** rng.uniform(*np.log10(alpha_range))
        level = 10 ** rng.uniform(*np.log10(level_range))
        E = perturb(prob, delta_Fprime=level, seed=seeds[k]).operator.E
        chk = tikhonov.verify_operator_perturbation(T2 + E, T2, prob.omega, prob.anchor, alpha, ssn,
                                                    prob.operator.constraint_mask, slack=slack)
        rows.append((alpha, level, chk.distance, chk.bound, chk.holds))
    ratios = [r[2] / r[3] for r in rows]
    return {
        "alphas": [r[0] for r in rows],
        "levels": [r[1] for r in rows],
        "distances": [r[2] for r in rows],
        "bounds": [r[3] for r in rows],
        "violations": int(sum(not r[4] for r in rows)),
        "max_ratio": float(max(ratios)),
    }


def stability_trials(n_trials: int = 200, size: int = 48, alpha_range: tuple[float, float] = (1e-4, 1.0),
                     seed: int = 0, slack: float = 1e-10, ssn: SsnConfig | None = None) -> dict:
    """``||x1 - x2|| <= ||y1 - y2|| / alpha`` on random smoothing instances.

    Each instance draws a blur width, a random anchor in C and two data
    vectors, with nonnegativity on a random subset of the components.
    """
    rng = np.random.default_rng(seed)
    ratios, violations = [], 0
    for _ in range(n_trials):
        spec = ToySpec(size=size, width=rng.uniform(0.5, 3.0), gain=rng.uniform(0.5, 2.0))
        T = build_linear_toy(replace(spec, omega=tuple(np.zeros(size)))).operator.T
        alpha = 10 ** rng.uniform(*np.log10(alpha_range))
        mask = rng.random(size) < 0.7
        x0 = np.where(mask, np.abs(rng.standard_normal(size)), rng.standard_normal(size))
        y1 = rng.standard_normal(size)
        y2 = y1 + rng.standard_normal(size) * 10 ** rng.uniform(-3, 0)
        chk = tikhonov.verify_stability(T, y1, y2, x0, alpha, ssn, mask, slack)
        ratios.append(chk.distance / chk.bound if chk.bound > 0 else 0.0)
        violations += not chk.holds
    return {"violations": int(violations), "max_ratio": float(max(ratios)), "n_trials": n_trials}
