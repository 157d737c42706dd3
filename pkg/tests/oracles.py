"""Reference implementations used as independent oracles in the tests.

Everything here is deliberately naive: explicit loops, exhaustive search
and dense linear algebra, with no code shared with the package.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def enumerate_active_sets(T, y, x0, alpha, mask):
    """Global minimiser of ||T x - y||^2 + alpha ||x - x0||^2 with x_i >= 0 on ``mask``.

    Tries every subset of the constrained indices as the set of components
    pinned at zero, minimises over the rest in closed form, keeps the
    feasible candidates and returns the one with the smallest objective.
    """
    T = np.asarray(T, float)
    n = T.shape[1]
    cons = np.flatnonzero(mask)
    N = T.T @ T + alpha * np.eye(n)
    b = T.T @ y + alpha * x0

    def objective(x):
        r = T @ x - y
        d = x - x0
        return r @ r + alpha * d @ d

    best, best_obj = None, math.inf
    for k in range(len(cons) + 1):
        for pinned in itertools.combinations(cons, k):
            free = np.setdiff1d(np.arange(n), pinned)
            x = np.zeros(n)
            if free.size:
                x[free] = np.linalg.solve(N[np.ix_(free, free)], b[free])
            if np.any(x[cons] < -1e-14):
                continue
            x[cons] = np.maximum(x[cons], 0.0)
            obj = objective(x)
            if obj < best_obj:
                best, best_obj = x, obj
    return best


def natural_residual(T, y, x0, alpha, mask, x):
    """||x - P_C(x - grad)|| with grad of the halved objective; zero exactly at the minimiser."""
    T = np.asarray(T, float)
    grad = T.T @ (T @ x - y) + alpha * (x - x0)
    z = x - grad
    proj = np.where(mask, np.maximum(z, 0.0), z)
    return float(np.linalg.norm(x - proj))


def loop_convolution(kernel_cell, f, spacing):
    """``g[x] = sum_y A[(x - y - pad) mod N] f[y] dV`` on the padded cell, by loops."""
    A = np.asarray(kernel_cell)
    f = np.asarray(f)
    N = A.shape
    pads = [(Nj - nj) // 2 for Nj, nj in zip(N, f.shape)]
    dV = float(np.prod(spacing))
    g = np.zeros(N, dtype=complex)
    for xi in itertools.product(*[range(Nj) for Nj in N]):
        acc = 0.0
        for yi in itertools.product(*[range(nj) for nj in f.shape]):
            off = tuple((a - b - p) % Nj for a, b, p, Nj in zip(xi, yi, pads, N))
            acc += A[off] * f[yi]
        g[xi] = acc * dV
    return g


def truncated_cosine_psf(sigmas, wavenumber, power, halfwidths, spacing):
    """Callable ``psf(offsets, phi)`` for the truncated, normalised cosine model.

    The normalisation constant is the product of 1-D Gaussian sums over the
    lattice offsets within the truncation halfwidths.
    """
    Z = 1.0
    for s, r, h in zip(sigmas, halfwidths, spacing):
        k = int(math.ceil(r / h)) + 1
        Z *= sum(math.exp(-0.5 * (i * h / s) ** 2) * h for i in range(-k, k + 1)
                 if abs(i * h) <= r * (1 + 1e-12))

    def psf(offsets, phi):
        inside = np.ones(np.shape(offsets[0]), bool)
        q = np.zeros(np.shape(offsets[0]))
        for z, s, r in zip(offsets, sigmas, halfwidths):
            inside &= np.abs(z) <= r * (1 + 1e-12)
            q += (z / s) ** 2
        val = np.exp(-0.5 * q) * np.cos(wavenumber * offsets[-1] + 0.5 * phi) ** power
        return np.where(inside, val, 0.0) / Z

    return psf
