"""Tensor-product Chebyshev basis for the relative phase, with its H^2 Gram matrix.

Each axis of the padded box ``[-H_j, H_j]`` is mapped linearly onto
``[-1, 1]``. A coefficient tensor ``c`` of shape ``degrees + 1`` represents

    phi(x) = sum_k c_k prod_j T_{k_j}(x_j / H_j)

and carries the metric ``||phi||^2 = int phi^2 + |grad phi|^2 + (Lap phi)^2``.
The Gram matrix is assembled from exact one-dimensional integrals, and its
Cholesky factor ``R`` (``G = R^T R``) maps coefficients to Euclidean
coordinates ``R c``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from numpy.polynomial import chebyshev as C
from numpy.polynomial import legendre as L

__all__ = ["PhaseBasis", "build_phase_basis", "axis_integrals", "GramError"]


class GramError(np.linalg.LinAlgError):
    """The assembled Gram matrix is not positive definite."""


def _cheb_values(degree: int, t: np.ndarray, deriv: int = 0) -> np.ndarray:
    """Matrix ``V[q, i] = d^deriv/dt^deriv T_i(t_q)``."""
    out = np.empty((t.size, degree + 1))
    for i in range(degree + 1):
        coef = np.zeros(degree + 1)
        coef[i] = 1.0
        if deriv:
            coef = C.chebder(coef, deriv)
        out[:, i] = C.chebval(t, coef)
    return out


def axis_integrals(degree: int, halfwidth: float) -> dict[str, np.ndarray]:
    """One-dimensional integrals over ``[-H, H]`` of the mapped Chebyshev polynomials.

    Returns ``mass`` (int T_i T_j), ``stiff`` (int T_i' T_j'), ``bending``
    (int T_i'' T_j'') and ``mixed`` (int T_i'' T_j), with derivatives taken
    in x. Gauss-Legendre with ``degree + 2`` nodes is exact for all of them.
    """
    H = float(halfwidth)
    t, wq = L.leggauss(degree + 2)
    V0 = _cheb_values(degree, t)
    V1 = _cheb_values(degree, t, 1)
    V2 = _cheb_values(degree, t, 2)
    # dx = H dt, d/dx = (1/H) d/dt
    return {
        "mass": H * (V0.T * wq) @ V0,
        "stiff": (V1.T * wq) @ V1 / H,
        "bending": (V2.T * wq) @ V2 / H ** 3,
        "mixed": (V2.T * wq) @ V0 / H,
    }


def _kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, m)
    return out


@dataclass(frozen=True)
class PhaseBasis:
    degrees: tuple[int, ...]
    halfwidths: tuple[float, ...]
    gram: np.ndarray
    factor: np.ndarray  # upper triangular R with gram = R^T R

    @property
    def ndim(self) -> int:
        return len(self.degrees)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(d + 1 for d in self.degrees)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def vandermonde(self, coords: Sequence[np.ndarray]) -> list[np.ndarray]:
        """Per-axis matrices ``V_j[q, i] = T_i(x_q / H_j)``."""
        if len(coords) != self.ndim:
            raise ValueError("need one coordinate array per axis")
        return [_cheb_values(d, np.asarray(x, float) / H)
                for d, x, H in zip(self.degrees, coords, self.halfwidths)]

    def evaluate(self, coeffs: np.ndarray, coords: Sequence[np.ndarray]) -> np.ndarray:
        """Values of the expansion on the tensor grid spanned by ``coords``."""
        c = np.asarray(coeffs, dtype=float).reshape(self.shape)
        out = c
        for V in self.vandermonde(coords):
            # contract the leading coefficient axis, append the grid axis
            out = np.tensordot(out, V, axes=([0], [1]))
        return out

    def moments(self, values: np.ndarray, coords: Sequence[np.ndarray],
                cell_volume: float) -> np.ndarray:
        """``b_k = sum_x psi_k(x) values(x) dV``: the transpose of ``evaluate`` times dV."""
        out = np.asarray(values, dtype=float)
        for V in self.vandermonde(coords):
            out = np.tensordot(out, V, axes=([0], [0]))
        return out.reshape(-1) * cell_volume

    def norm(self, coeffs: np.ndarray) -> float:
        c = np.asarray(coeffs, dtype=float).reshape(-1)
        return float(np.sqrt(max(c @ self.gram @ c, 0.0)))

    def whiten(self, coeffs: np.ndarray) -> np.ndarray:
        return self.factor @ np.asarray(coeffs, dtype=float).reshape(-1)

    def unwhiten(self, u: np.ndarray) -> np.ndarray:
        return sla.solve_triangular(self.factor, np.asarray(u, float), lower=False)

    def unwhiten_adjoint(self, b: np.ndarray) -> np.ndarray:
        """``R^{-T} b``: maps an L2 moment vector to whitened coordinates."""
        return sla.solve_triangular(self.factor, np.asarray(b, float), trans="T", lower=False)

    def riesz(self, b: np.ndarray) -> np.ndarray:
        """``G^{-1} b``, the coefficient vector representing the functional ``b``."""
        return sla.cho_solve((self.factor, False), np.asarray(b, float))


def build_phase_basis(degrees: Sequence[int], halfwidths: Sequence[float]) -> PhaseBasis:
    """Basis of the given per-axis maximal degrees on ``prod [-H_j, H_j]``."""
    degrees = tuple(int(d) for d in degrees)
    halfwidths = tuple(float(h) for h in halfwidths)
    if len(degrees) != len(halfwidths) or not degrees:
        raise ValueError("degrees and halfwidths need one entry per axis")
    if any(d < 0 for d in degrees) or any(not h > 0 for h in halfwidths):
        raise ValueError("degrees must be >= 0 and halfwidths > 0")
    ints = [axis_integrals(d, h) for d, h in zip(degrees, halfwidths)]
    mass = [q["mass"] for q in ints]
    ndim = len(degrees)

    def replaced(subs: dict[int, np.ndarray]) -> np.ndarray:
        return _kron_all([subs.get(j, mass[j]) for j in range(ndim)])

    G = _kron_all(mass)
    for j in range(ndim):
        G = G + replaced({j: ints[j]["stiff"]}) + replaced({j: ints[j]["bending"]})
        for k in range(ndim):
            if k != j:
                G = G + replaced({j: ints[j]["mixed"], k: ints[k]["mixed"].T})
    G = 0.5 * (G + G.T)
    try:
        R = sla.cholesky(G, lower=False)
    except np.linalg.LinAlgError as exc:
        ev = np.linalg.eigvalsh(G)
        raise GramError(f"Gram matrix not positive definite (eigenvalues in [{ev[0]:.3e}, {ev[-1]:.3e}])") from exc
    return PhaseBasis(degrees, halfwidths, G, R)
