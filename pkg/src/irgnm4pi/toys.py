"""Synthetic inverse problems with a known solution satisfying the projected source condition.

The linear toy is a periodic Gaussian blur ``T`` on a 1-D grid (strictly
positive transfer function, hence injective). The nonlinear toy is
``F(x) = T x + beta (T x)^2`` whose derivative and adjoint are closed form.
In both cases the exact solution is built as ``x = P_C(F'[x]* omega + x0)``,
by a fixed-point iteration in the nonlinear case, so the source condition
holds at the operator's own derivative.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .irgnm import ForwardOperator, Linearization

__all__ = [
    "ToySpec",
    "ToyOperator",
    "ToyProblem",
    "RateFit",
    "gaussian_blur_matrix",
    "build_linear_toy",
    "build_nonlinear_toy",
    "perturb",
    "measure_rate",
    "power_norm",
    "source_residual",
]


def gaussian_transfer(size: int, width: float, gain: float = 1.0) -> np.ndarray:
    """Transfer function of a periodic Gaussian blur of std ``width`` grid cells."""
    k = np.fft.fftfreq(size) * 2 * np.pi
    return gain * np.exp(-0.5 * (width * k) ** 2)


def circulant_from_transfer(transfer: np.ndarray) -> np.ndarray:
    """Dense real circulant matrix with the given even transfer function."""
    kernel = np.fft.ifft(transfer).real
    n = kernel.size
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return kernel[idx]


def gaussian_blur_matrix(size: int, width: float, gain: float = 1.0) -> np.ndarray:
    return circulant_from_transfer(gaussian_transfer(size, width, gain))


@dataclass(frozen=True)
class ToySpec:
    """Parameters of a toy problem.

    ``omega`` defaults to a seeded random source element with norm ``rho``
    whose power grows like ``|frequency|``. Against a Gaussian blur this
    spreads its energy evenly over the logarithm of the spectrum of
    ``T T*``, which makes ``||x_alpha - x_true||^2`` close to proportional to
    alpha over many decades. ``T* omega`` changes sign, so the constraint
    binds on roughly half the grid. ``anchor`` defaults to zero.
    """

    size: int = 256
    width: float = 2.5
    gain: float = 1.0
    rho: float = 1.0
    beta: float = 0.0
    seed: int = 0
    omega: Optional[tuple] = None
    anchor: Optional[tuple] = None
    constrained: bool = True

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.size < 2 or not self.width > 0:
            raise ValueError("invalid grid size or width")

    def omega_vector(self) -> np.ndarray:
        if self.omega is not None:
            w = np.asarray(self.omega, dtype=float)
            if w.shape != (self.size,):
                raise ValueError("omega has the wrong length")
            return w
        rng = np.random.default_rng(self.seed)
        k = np.fft.fftfreq(self.size, d=1.0 / self.size)
        coef = np.sqrt(np.abs(k)) * (rng.standard_normal(self.size)
                                     + 1j * rng.standard_normal(self.size))
        w = np.fft.ifft(coef).real
        return self.rho * w / np.linalg.norm(w)

    def anchor_vector(self) -> np.ndarray:
        if self.anchor is None:
            return np.zeros(self.size)
        return np.asarray(self.anchor, dtype=float)

    def mask(self) -> np.ndarray:
        return np.full(self.size, self.constrained)


class ToyOperator(ForwardOperator):
    """``F(x) = T x + beta (T x)^2 + E (x - x_ref) + offset``.

    ``E`` and ``offset`` model operator errors; both are zero for the exact
    operator.
    """

    def __init__(self, T: np.ndarray, beta: float, mask: np.ndarray,
                 E: np.ndarray | None = None, x_ref: np.ndarray | None = None,
                 offset: np.ndarray | None = None):
        self.T = np.asarray(T, dtype=float)
        self.beta = float(beta)
        self.constraint_mask = np.asarray(mask, dtype=bool)
        n = self.T.shape[1]
        self.E = E
        self.x_ref = np.zeros(n) if x_ref is None else np.asarray(x_ref, float)
        self.offset = np.zeros(self.T.shape[0]) if offset is None else np.asarray(offset, float)

    @property
    def is_linear(self) -> bool:
        return self.beta == 0.0

    def evaluate(self, x):
        Tx = self.T @ x
        y = Tx + self.beta * Tx ** 2 + self.offset
        if self.E is not None:
            y = y + self.E @ (x - self.x_ref)
        return y

    def derivative_apply(self, x, h):
        return self._lin(x).apply(h)

    def derivative_adjoint(self, x, g):
        return self._lin(x).adjoint(g)

    def linearize(self, x):
        return self._lin(x)

    def _lin(self, x) -> Linearization:
        Tx = self.T @ x
        gain = 1.0 + 2.0 * self.beta * Tx
        T, E = self.T, self.E

        def apply(h):
            out = gain * (T @ h)
            return out if E is None else out + E @ h

        def adjoint(g):
            out = T.T @ (gain * g)
            return out if E is None else out + E.T @ g

        value = Tx + self.beta * Tx ** 2 + self.offset
        if E is not None:
            value = value + E @ (x - self.x_ref)
        return Linearization(value, apply, adjoint)

    def derivative_matrix(self, x) -> np.ndarray:
        J = (1.0 + 2.0 * self.beta * (self.T @ x))[:, None] * self.T
        return J if self.E is None else J + self.E

    def lipschitz_bound(self) -> float:
        """Bound on ||F'[x1] - F'[x2]|| / ||x1 - x2||, namely 2 beta ||T||^2."""
        return 2.0 * self.beta * np.linalg.norm(self.T, 2) ** 2


@dataclass
class ToyProblem:
    spec: ToySpec
    operator: ToyOperator
    x_true: np.ndarray
    data: np.ndarray
    omega: np.ndarray
    anchor: np.ndarray
    exact_data: np.ndarray = None
    noise: dict = field(default_factory=lambda: {"delta_g": 0.0, "delta_F": 0.0, "delta_Fprime": 0.0})
    fixed_point_iters: int = 0

    def __post_init__(self):
        if self.exact_data is None:
            self.exact_data = self.data.copy()

    @property
    def lipschitz(self) -> float:
        return self.operator.lipschitz_bound()

    def save(self, directory) -> Path:
        """Write vectors in the shared field format plus a JSON manifest."""
        from .fieldio import write_field
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        spacing = (1.0,)
        for name, vec in (("x_true", self.x_true), ("data", self.data), ("omega", self.omega),
                          ("anchor", self.anchor), ("exact_data", self.exact_data),
                          ("offset", self.operator.offset)):
            write_field(d / name, vec, spacing, kind="object" if name in ("x_true", "anchor") else "data")
        if self.operator.E is not None:
            write_field(d / "operator_error", self.operator.E, (1.0, 1.0), kind="data")
        manifest = {
            "spec": {k: (list(v) if isinstance(v, tuple) else v)
                     for k, v in self.spec.__dict__.items()},
            "noise": self.noise,
            "has_operator_error": self.operator.E is not None,
        }
        (d / "toy.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return d

    @classmethod
    def load(cls, directory) -> "ToyProblem":
        from .fieldio import read_field
        d = Path(directory)
        man = json.loads((d / "toy.json").read_text())
        spec_kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in man["spec"].items()}
        spec = ToySpec(**spec_kw)
        T = gaussian_blur_matrix(spec.size, spec.width, spec.gain)
        vec = {n: read_field(d / n).values for n in
               ("x_true", "data", "omega", "anchor", "exact_data", "offset")}
        E = read_field(d / "operator_error").values if man["has_operator_error"] else None
        op = ToyOperator(T, spec.beta, spec.mask(), E=E, x_ref=vec["x_true"], offset=vec["offset"])
        return cls(spec, op, vec["x_true"], vec["data"], vec["omega"], vec["anchor"],
                   exact_data=vec["exact_data"], noise=man["noise"])


def source_residual(op: ToyOperator, x: np.ndarray, omega: np.ndarray, anchor: np.ndarray) -> float:
    """||x - P_C(F'[x]* omega + x0)||."""
    z = op.derivative_adjoint(x, omega) + anchor
    return float(np.linalg.norm(x - np.where(op.constraint_mask, np.maximum(z, 0.0), z)))


def build_linear_toy(spec: ToySpec) -> ToyProblem:
    if spec.beta != 0:
        raise ValueError("build_linear_toy needs beta = 0")
    T = gaussian_blur_matrix(spec.size, spec.width, spec.gain)
    op = ToyOperator(T, 0.0, spec.mask())
    omega, x0 = spec.omega_vector(), spec.anchor_vector()
    z = T.T @ omega + x0
    x_true = np.where(op.constraint_mask, np.maximum(z, 0.0), z)
    g = op.evaluate(x_true)
    return ToyProblem(spec, op, x_true, g, omega, x0)


def build_nonlinear_toy(spec: ToySpec, tol: float = 1e-13, max_iter: int = 200) -> ToyProblem:
    """Nonlinear toy; the exact solution is the fixed point of ``x -> P_C(F'[x]* omega + x0)``.

    Raises ``ValueError`` with the measured contraction factor when the map
    does not contract (beta too large).
    """
    T = gaussian_blur_matrix(spec.size, spec.width, spec.gain)
    op = ToyOperator(T, spec.beta, spec.mask())
    omega, x0 = spec.omega_vector(), spec.anchor_vector()

    def step(x):
        z = op.derivative_adjoint(x, omega) + x0
        return np.where(op.constraint_mask, np.maximum(z, 0.0), z)

    x = np.where(op.constraint_mask, np.maximum(T.T @ omega + x0, 0.0), T.T @ omega + x0)
    prev_change = None
    factor = 0.0
    iters = 0
    for iters in range(1, max_iter + 1):
        x_new = step(x)
        change = float(np.linalg.norm(x_new - x))
        if prev_change is not None and prev_change > 0:
            factor = change / prev_change
            if factor >= 1.0 and change > tol:
                raise ValueError(f"source fixed point does not contract (factor {factor:.3f}); reduce beta")
        x = x_new
        if change < tol:
            break
        prev_change = change
    else:
        raise ValueError(f"source fixed point not reached in {max_iter} steps (factor {factor:.3f})")
    g = op.evaluate(x)
    return ToyProblem(spec, op, x, g, omega, x0, fixed_point_iters=iters)


def power_norm(apply, adjoint, n: int, iters: int = 20, rtol: float = 1e-3,
               rng: np.random.Generator | None = None) -> float:
    """Operator norm estimate by power iteration on A*A."""
    rng = rng or np.random.default_rng(0)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = adjoint(apply(v))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        new = math.sqrt(nw)
        v = w / nw
        converged = est > 0 and abs(new - est) <= rtol * new
        est = new
        if converged:
            break
    return est


def perturb(problem: ToyProblem, delta_g: float = 0.0, delta_F: float = 0.0,
            delta_Fprime: float = 0.0, seed: int = 0) -> ToyProblem:
    """Return a copy with data and operator errors of exactly the requested sizes.

    * ``g_delta = g + e`` with ``||e|| = delta_g`` in a random direction;
    * ``F_delta(x) = F(x) + E (x - x_true) + b`` with ``||b|| = delta_F`` so
      that ``||F(x_true) - F_delta(x_true)|| = delta_F`` exactly;
    * ``E`` is a circulant with a random even transfer perturbation, scaled by
      a power-iteration estimate to ``||E|| = delta_Fprime``; hence
      ``F_delta'[x] = F'[x] + E`` at every x.
    """
    if min(delta_g, delta_F, delta_Fprime) < 0:
        raise ValueError("noise levels must be nonnegative")
    rng = np.random.default_rng(seed)
    n = problem.spec.size
    op = problem.operator

    e = rng.standard_normal(problem.exact_data.shape)
    data = problem.exact_data + (delta_g * e / np.linalg.norm(e) if delta_g > 0 else 0.0)

    b = rng.standard_normal(problem.exact_data.shape)
    offset = delta_F * b / np.linalg.norm(b) if delta_F > 0 else np.zeros_like(b)

    E = None
    if delta_Fprime > 0:
        # even transfer => real symmetric circulant; one dominant mode pair
        # gives power iteration a spectral gap of 2
        t = rng.uniform(-0.5, 0.5, n)
        k0 = int(rng.integers(1, n // 2))
        t[k0] = rng.choice([-1.0, 1.0])
        t = 0.5 * (t + t[(-np.arange(n)) % n])
        t[k0] = t[-k0] = np.sign(t[k0])
        E = circulant_from_transfer(t)
        est = power_norm(lambda v: E @ v, lambda v: E.T @ v, n, rng=rng)
        E *= delta_Fprime / est

    new_op = ToyOperator(op.T, op.beta, op.constraint_mask, E=E, x_ref=problem.x_true, offset=offset)
    return replace(problem, operator=new_op, data=data, exact_data=problem.exact_data.copy(),
                   noise={"delta_g": float(delta_g), "delta_F": float(delta_F),
                          "delta_Fprime": float(delta_Fprime)})


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    n_points: int


def measure_rate(values: Sequence[float], abscissa: Sequence[float]) -> RateFit:
    """Least-squares fit of ``log(values) = slope * log(abscissa) + intercept``."""
    y = np.asarray(values, dtype=float)
    x = np.asarray(abscissa, dtype=float)
    if y.shape != x.shape:
        raise ValueError("values and abscissa differ in length")
    if y.size < 5:
        raise ValueError("need at least 5 points for a rate fit")
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError("rate fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - ly) ** 2)))
    return RateFit(float(coef[0]), float(coef[1]), resid, int(y.size))
