"""Synthetic ground truths and simulated 4Pi measurements."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import grid
from .fourpi import FourPiModel
from .grid import Field

__all__ = [
    "filament_object",
    "block_object",
    "sine_arctan_phase",
    "SimulatedData",
    "simulate",
]


def _mesh(dims, spacing):
    coords = [(np.arange(n) - 0.5 * (n - 1)) * h for n, h in zip(dims, spacing)]
    return np.meshgrid(*coords, indexing="ij")


def filament_object(dims: Sequence[int], spacing: Sequence[float], n_filaments: int = 4,
                    thickness_nm: float = 40.0, seed: int = 0) -> np.ndarray:
    """Thin curved filaments with a Gaussian cross-section and peak value 1.

    Each filament is a random smooth curve (a line bent by two low-frequency
    sine modes) drawn through the inner 80% of the box. Works in 2-D and
    3-D; in 3-D the curves wander along all axes. Values are exactly zero
    more than four thicknesses away from every curve.
    """
    dims, spacing = tuple(dims), tuple(float(h) for h in spacing)
    rng = np.random.default_rng(seed)
    X = _mesh(dims, spacing)
    half = np.array([0.4 * n * h for n, h in zip(dims, spacing)])
    out = np.zeros(dims)
    s = np.linspace(0.0, 1.0, 400)
    for _ in range(n_filaments):
        a, b = rng.uniform(-1, 1, (2, len(dims))) * half
        bend = rng.uniform(-0.25, 0.25, (2, len(dims))) * half
        pts = (a[None] + s[:, None] * (b - a)[None]
               + np.sin(np.pi * s)[:, None] * bend[0] + np.sin(2 * np.pi * s)[:, None] * bend[1])
        pts = np.clip(pts, -half, half)
        d2 = np.full(dims, np.inf)
        for p in pts:
            d2 = np.minimum(d2, sum((x - pj) ** 2 for x, pj in zip(X, p)))
        prof = np.exp(-0.5 * d2 / thickness_nm ** 2)
        prof[d2 > (4 * thickness_nm) ** 2] = 0.0
        out = np.maximum(out, prof)
    return out


def block_object(dims: Sequence[int], spacing: Sequence[float], fraction: float = 0.4,
                 value: float = 1.0) -> np.ndarray:
    """Piecewise-constant centred block covering ``fraction`` of each axis."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    X = _mesh(dims, spacing)
    inside = np.ones(tuple(dims), bool)
    for x, n, h in zip(X, dims, spacing):
        inside &= np.abs(x) <= 0.5 * fraction * n * h
    return np.where(inside, float(value), 0.0)


def sine_arctan_phase(dims: Sequence[int], spacing: Sequence[float], shift: float = 0.5,
                      sine_amp: float = 1.2, arctan_amp: float = 1.2,
                      arctan_scale: float = 0.25) -> np.ndarray:
    """Shifted sum of a lateral sine and an axial arctan, not a polynomial.

    ``phi = shift + sine_amp sin(pi x_0 / H_0) + arctan_amp (2/pi) arctan(x_last / (s H_last))``
    on the grid with halfwidths ``H``. The defaults give values within
    about [-1.9, 2.9].
    """
    X = _mesh(dims, spacing)
    H = [0.5 * n * h for n, h in zip(dims, spacing)]
    phi = shift + sine_amp * np.sin(np.pi * X[0] / H[0])
    phi = phi + arctan_amp * (2.0 / math.pi) * np.arctan(X[-1] / (arctan_scale * H[-1]))
    return phi


@dataclass
class SimulatedData:
    object: np.ndarray          # scaled ground-truth object on the box
    phase_field: np.ndarray     # ground-truth phase on the padded cell
    exact: np.ndarray           # F(object, phase)
    noisy: np.ndarray           # Poisson sample of ``exact``
    scale: float                # factor applied to the unit-peak object
    relative_noise: float       # ||noisy - exact|| / ||exact|| (nan for zero data)
    clamped: int                # negative means clamped before sampling


def simulate(model: FourPiModel, unit_object: np.ndarray, phase_field: np.ndarray,
             peak: float, seed: int) -> SimulatedData:
    """Scale the object so the exact data peak at ``peak`` counts, then draw Poisson data.

    The psf has small negative lobes in general, so exact data can dip
    below zero; those means are clamped to zero before sampling and counted.
    """
    if peak < 0:
        raise ValueError("peak intensity must be nonnegative")
    g_unit = model.forward_field(unit_object, phase_field)
    top = float(np.max(g_unit))
    scale = peak / top if top > 0 and peak > 0 else 0.0
    f = unit_object * scale
    exact = g_unit * scale
    clamped = int(np.count_nonzero(exact < 0))
    mean = Field(np.maximum(exact, 0.0), model.spacing)
    noisy = grid.poisson_sample(mean, seed).values
    ne = float(np.linalg.norm(exact))
    rel = float(np.linalg.norm(noisy - exact) / ne) if ne > 0 else math.nan
    return SimulatedData(f, phase_field, exact, noisy, scale, rel, clamped)
