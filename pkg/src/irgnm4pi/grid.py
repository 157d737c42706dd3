"""Regular-grid fields, weighted inner products and FFT convolution.

All integrals use the midpoint rule on cell-centred samples, so an integral
is a voxel-volume weighted sum. Objects live on the box ``Omega`` and are
zero padded into the larger periodic cell ``Omega'`` before any FFT; cropping
back is the exact discrete adjoint of padding.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.fft as sfft

__all__ = [
    "DomainBox",
    "Field",
    "WeightField",
    "set_fft_workers",
    "fftn",
    "ifftn",
    "pad",
    "crop",
    "inner_weighted",
    "convolve",
    "correlate",
    "poisson_sample",
    "weight_from_data",
]

_FFT_WORKERS = 1


def set_fft_workers(n: int) -> None:
    """Number of threads handed to scipy.fft (results do not depend on it)."""
    global _FFT_WORKERS
    if n < 1:
        raise ValueError("need at least one FFT worker")
    _FFT_WORKERS = int(n)


def fftn(a: np.ndarray) -> np.ndarray:
    return sfft.fftn(a, workers=_FFT_WORKERS)


def ifftn(a: np.ndarray) -> np.ndarray:
    return sfft.ifftn(a, workers=_FFT_WORKERS)


@dataclass(frozen=True)
class DomainBox:
    """Object box Omega = prod[-R_j, R_j] and the padded cell Omega'.

    Lengths are in nm. The discrete object grid has ``round(2 R_j / h_j)``
    cells per axis and is padded by ``ceil(r_j / h_j)`` cells on each side.
    """

    object_halfwidths: tuple[float, ...]
    kernel_halfwidths: tuple[float, ...]
    voxel_spacing: tuple[float, ...]

    def __post_init__(self):
        for name in ("object_halfwidths", "kernel_halfwidths", "voxel_spacing"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals or any(not (v > 0 and math.isfinite(v)) for v in vals):
                raise ValueError(f"{name} must be strictly positive, got {vals}")
            object.__setattr__(self, name, vals)
        n = len(self.voxel_spacing)
        if len(self.object_halfwidths) != n or len(self.kernel_halfwidths) != n:
            raise ValueError("all DomainBox fields need one entry per axis")

    @classmethod
    def from_dims(cls, dims: Sequence[int], spacing: Sequence[float],
                  kernel_halfwidths: Sequence[float]) -> "DomainBox":
        halfw = tuple(0.5 * n * h for n, h in zip(dims, spacing))
        return cls(halfw, tuple(kernel_halfwidths), tuple(spacing))

    @property
    def ndim(self) -> int:
        return len(self.voxel_spacing)

    @property
    def object_dims(self) -> tuple[int, ...]:
        return tuple(max(1, int(round(2 * R / h)))
                     for R, h in zip(self.object_halfwidths, self.voxel_spacing))

    @property
    def pad_widths(self) -> tuple[int, ...]:
        return tuple(int(math.ceil(r / h - 1e-9))
                     for r, h in zip(self.kernel_halfwidths, self.voxel_spacing))

    @property
    def extended_dims(self) -> tuple[int, ...]:
        return tuple(n + 2 * k for n, k in zip(self.object_dims, self.pad_widths))

    @property
    def extended_halfwidths(self) -> tuple[float, ...]:
        return tuple(0.5 * N * h for N, h in zip(self.extended_dims, self.voxel_spacing))

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.voxel_spacing))

    def object_coords(self) -> list[np.ndarray]:
        return _centred_coords(self.object_dims, self.voxel_spacing)

    def extended_coords(self) -> list[np.ndarray]:
        return _centred_coords(self.extended_dims, self.voxel_spacing)

    def kernel_offsets(self) -> list[np.ndarray]:
        """Per-axis offsets of the Omega' period cell in FFT order (origin at index 0)."""
        return [np.fft.fftfreq(N, d=1.0 / N) * h
                for N, h in zip(self.extended_dims, self.voxel_spacing)]


def _centred_coords(dims, spacing):
    return [(np.arange(n) - 0.5 * (n - 1)) * h for n, h in zip(dims, spacing)]


@dataclass(frozen=True)
class Field:
    """Samples of a (real or complex) function on a regular grid."""

    values: np.ndarray
    spacing: tuple[float, ...]

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim == 0 or any(d <= 0 for d in vals.shape):
            raise ValueError(f"field needs positive dims, got {vals.shape}")
        spacing = tuple(float(h) for h in self.spacing)
        if len(spacing) != vals.ndim:
            raise ValueError("spacing needs one entry per axis")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))


@dataclass(frozen=True)
class WeightField(Field):
    """Data-space weight ``w = 1 / (2 max(g_delta, floor))``."""

    floor: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values <= 0) or np.any(self.values > 0.5 / self.floor * (1 + 1e-12)):
            raise ValueError("weights must lie in (0, 1/(2 floor)]")


def _check_same_grid(*fields: Field) -> None:
    first = fields[0]
    for f in fields[1:]:
        if f.dims != first.dims:
            raise ValueError(f"dimension mismatch: {f.dims} vs {first.dims}")
        if not np.allclose(f.spacing, first.spacing, rtol=1e-12, atol=0):
            raise ValueError(f"spacing mismatch: {f.spacing} vs {first.spacing}")


def pad(f: np.ndarray, widths: Sequence[int]) -> np.ndarray:
    return np.pad(f, [(k, k) for k in widths])


def crop(g: np.ndarray, widths: Sequence[int]) -> np.ndarray:
    return g[tuple(slice(k, g.shape[j] - k) for j, k in enumerate(widths))]


def pad_widths_between(inner: Sequence[int], outer: Sequence[int]) -> tuple[int, ...]:
    if len(inner) != len(outer):
        raise ValueError("incompatible grids: axis count differs")
    widths = []
    for n, N in zip(inner, outer):
        if N < n or (N - n) % 2:
            raise ValueError(f"incompatible grids: cannot centre {tuple(inner)} in {tuple(outer)}")
        widths.append((N - n) // 2)
    return tuple(widths)


def inner_weighted(a: Field, b: Field, w: Field) -> float:
    """Weighted L2 pairing sum(a * b * w) * voxel volume."""
    _check_same_grid(a, b, w)
    return float(np.vdot(a.values, b.values * w.values).real * a.voxel_volume)


def convolve(kernel: Field, f: Field) -> Field:
    """Circular convolution on Omega' of the zero padded ``f`` with ``kernel``.

    ``kernel`` is sampled on the Omega' period cell with the origin at index 0.
    With kernel support inside the padding this equals the integral
    ``int_Omega A(x - y) f(y) dy`` evaluated at the Omega' cell centres.
    """
    if not np.allclose(kernel.spacing, f.spacing, rtol=1e-12, atol=0):
        raise ValueError("incompatible grids: spacing differs")
    widths = pad_widths_between(f.dims, kernel.dims)
    spec = fftn(kernel.values) * fftn(pad(f.values, widths))
    return Field(ifftn(spec) * f.voxel_volume, kernel.spacing)


def correlate(kernel: Field, g: Field) -> Field:
    """Hermitian adjoint of :func:`convolve` before cropping.

    ``correlate(A, g)(y) = sum_x conj(A(x - y)) g(x) dV`` so that
    ``<convolve(A, f), g> = <f, crop(correlate(A, g))>`` in plain L2.
    """
    _check_same_grid(kernel, g)
    spec = np.conj(fftn(kernel.values)) * fftn(g.values)
    return Field(ifftn(spec) * g.voxel_volume, g.spacing)


def poisson_sample(mean: Field, seed: int) -> Field:
    """Independent Poisson counts per voxel; negative means are clamped to zero."""
    lam = np.asarray(mean.values, dtype=float)
    n_neg = int(np.count_nonzero(lam < 0))
    if n_neg:
        warnings.warn(f"poisson_sample: clamped {n_neg} negative means to 0", stacklevel=2)
        lam = np.maximum(lam, 0.0)
    rng = np.random.default_rng(seed)
    return Field(rng.poisson(lam).astype(float), mean.spacing)


def weight_from_data(g_delta: Field, floor: float) -> WeightField:
    if not floor > 0:
        raise ValueError(f"floor must be positive, got {floor}")
    w = 0.5 / np.maximum(g_delta.values, floor)
    return WeightField(w, g_delta.spacing, floor=float(floor))
