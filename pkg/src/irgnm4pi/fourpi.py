"""Phase-dependent 4Pi imaging operator over (object, phase).

The psf family is stored through its Fourier series in the phase,
``p(z, phi) = sum_{m=-M..M} exp(i m phi) A_m(z)`` with ``A_{-m} = conj(A_m)``,
so only ``A_0 .. A_M`` are kept. The forward map is

    g(x) = sum_m exp(i m phi(x)) (A_m * f)(x)
         = Re C_0(x) + 2 Re sum_{m>=1} exp(i m phi(x)) C_m(x),   C_m = A_m * f,

with the convolution taken over the object box and evaluated on the padded
cell by FFT. Kernels live on that cell with the origin at index 0.

The solver-facing :class:`FourPiProblem` works in Euclidean coordinates:
``u = (sqrt(dV) f, R c)`` with ``G = R^T R`` the H^2 Gram factor of the
phase basis, and data ``v = sqrt(w dV) g`` with the Poisson-type weight w.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import grid
from .chebyshev import PhaseBasis
from .fieldio import dumps_json, read_field, write_field
from .grid import DomainBox, Field, WeightField
from .irgnm import ForwardOperator, Linearization

__all__ = [
    "CosinePsfSpec",
    "KernelExpansion",
    "JointState",
    "SceneTruth",
    "FourPiModel",
    "FourPiProblem",
    "build_cosine_expansion",
    "save_expansion",
    "load_expansion",
    "synthesize_psf",
    "direct_forward",
    "SymmetryError",
]

_FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


class SymmetryError(ValueError):
    """Loaded kernel components are not conjugate symmetric."""


@dataclass(frozen=True)
class CosinePsfSpec:
    """``p(z, phi) = h(z) cos^n(c z_last + phi / 2)`` with a Gaussian ``h``.

    ``sigmas`` are the Gaussian standard deviations per axis in nm, optical
    axis last; ``wavenumber`` is c in 1/nm; ``power`` is n.
    """

    sigmas: tuple[float, ...]
    wavenumber: float
    power: int = 2

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigmas)
        if not sig or any(not s > 0 for s in sig):
            raise ValueError("Gaussian widths must be positive")
        if self.power not in (2, 4):
            raise ValueError(f"unsupported cosine power {self.power}; use 2 or 4")
        if not self.wavenumber > 0:
            raise ValueError("wavenumber must be positive")
        object.__setattr__(self, "sigmas", sig)

    @classmethod
    def from_optics(cls, ndim: int = 2, numerical_aperture: float = 1.34,
                    excitation_nm: float = 635.0, emission_nm: float = 680.0,
                    immersion_index: float = 1.518, power: int = 2) -> "CosinePsfSpec":
        """Confocal Gaussian widths from the usual FWHM rules of thumb.

        Lateral FWHM ``0.51 lambda / NA`` and axial FWHM
        ``0.88 lambda / (n - sqrt(n^2 - NA^2))`` with the effective confocal
        wavelength ``sqrt(2) l_ex l_em / sqrt(l_ex^2 + l_em^2)``; the
        interference wavenumber is ``2 pi n / l_ex``.
        """
        na, n = numerical_aperture, immersion_index
        if not 0 < na < n:
            raise ValueError("need 0 < NA < immersion index")
        lam = math.sqrt(2.0) * excitation_nm * emission_nm / math.hypot(excitation_nm, emission_nm)
        lateral = 0.51 * lam / na / _FWHM_PER_SIGMA
        axial = 0.88 * lam / (n - math.sqrt(n * n - na * na)) / _FWHM_PER_SIGMA
        sig = (lateral,) * (ndim - 1) + (axial,)
        return cls(sig, 2.0 * math.pi * n / excitation_nm, power)

    def kernel_halfwidths(self, n_sigma: float = 3.0) -> tuple[float, ...]:
        return tuple(n_sigma * s for s in self.sigmas)

    def direct(self, offsets: Sequence[np.ndarray], phi) -> np.ndarray:
        """Untruncated, unnormalised ``exp(-|z|^2/2s^2) cos^n(c z_last + phi/2)``."""
        q = sum((z / s) ** 2 for z, s in zip(offsets, self.sigmas))
        return np.exp(-0.5 * q) * np.cos(self.wavenumber * offsets[-1] + 0.5 * phi) ** self.power


@dataclass(frozen=True, eq=False)
class KernelExpansion:
    """Components ``A_0 .. A_M`` on the padded cell (origin at index 0)."""

    components: tuple[np.ndarray, ...]
    spacing: tuple[float, ...]
    provenance: str = "cosine-model"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        comps = tuple(np.asarray(a, dtype=complex) for a in self.components)
        if not comps:
            raise ValueError("need at least the m = 0 component")
        if any(a.shape != comps[0].shape for a in comps):
            raise ValueError("kernel components differ in shape")
        if not all(np.all(np.isfinite(a)) for a in comps):
            raise ValueError("kernel components must be finite")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))

    @property
    def order(self) -> int:
        return len(self.components) - 1

    @property
    def dims(self) -> tuple[int, ...]:
        return self.components[0].shape

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    def component(self, m: int) -> np.ndarray:
        a = self.components[abs(m)]
        return a if m >= 0 else np.conj(a)

    @cached_property
    def spectra(self) -> tuple[np.ndarray, ...]:
        return tuple(grid.fftn(a) for a in self.components)

    @cached_property
    def conj_spectra(self) -> tuple[np.ndarray, ...]:
        return tuple(np.conj(s) for s in self.spectra)

    def psf(self, phi) -> np.ndarray:
        """``p(z, phi)`` on the cell; ``phi`` is a scalar or broadcastable array."""
        out = self.components[0].real.copy() * np.ones(np.shape(phi))
        for m in range(1, self.order + 1):
            out = out + 2.0 * (np.exp(1j * m * np.asarray(phi)) * self.components[m]).real
        return out

    def offsets(self) -> list[np.ndarray]:
        return [np.fft.fftfreq(N, d=1.0 / N) * h for N, h in zip(self.dims, self.spacing)]


def build_cosine_expansion(spec: CosinePsfSpec, box: DomainBox) -> KernelExpansion:
    """Binomial expansion of ``h cos^n(c z + phi/2)`` on the padded cell of ``box``.

    ``h`` is the Gaussian truncated to ``|z_j| <= r_j`` (the kernel
    halfwidths of ``box``) and normalised so that ``sum h dV = 1``.
    """
    if len(spec.sigmas) != box.ndim:
        raise ValueError("psf spec and domain box differ in dimension")
    offs = box.kernel_offsets()
    mesh = np.meshgrid(*offs, indexing="ij")
    q = sum((z / s) ** 2 for z, s in zip(mesh, spec.sigmas))
    inside = np.ones(q.shape, bool)
    for z, r in zip(mesh, box.kernel_halfwidths):
        inside &= np.abs(z) <= r * (1 + 1e-12)
    h = np.where(inside, np.exp(-0.5 * q), 0.0)
    h /= h.sum() * box.voxel_volume
    n = spec.power
    z = mesh[-1]
    comps = []
    for m in range(n // 2 + 1):
        weight = math.comb(n, n // 2 + m) / 2.0 ** n
        comps.append(weight * h * np.exp(2j * m * spec.wavenumber * z))
    meta = {"sigmas_nm": list(spec.sigmas), "wavenumber_per_nm": spec.wavenumber, "power": n}
    return KernelExpansion(tuple(comps), box.voxel_spacing, "cosine-model", meta)


def save_expansion(K: KernelExpansion, directory) -> Path:
    """Write ``A_m`` for m = -M..M as kernel_real/kernel_imag pairs plus a manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for m in range(-K.order, K.order + 1):
        a = K.component(m)
        stem = f"A_{m:+d}"
        write_field(d / f"{stem}_real", a.real, K.spacing, "kernel_real")
        write_field(d / f"{stem}_imag", a.imag, K.spacing, "kernel_imag")
        names.append(stem)
    manifest = {"order": K.order, "m_order": list(range(-K.order, K.order + 1)),
                "stems": names, "provenance": K.provenance, "meta": K.meta}
    (d / "manifest.json").write_text(dumps_json(manifest) + "\n")
    return d


def load_expansion(path, symmetry_tol: float = 1e-8) -> KernelExpansion:
    """Read kernels written by :func:`save_expansion` (or produced externally).

    ``path`` is the directory or its ``manifest.json``. Symmetry is enforced
    by averaging ``A_m`` with ``conj(A_{-m})`` after checking that they agree
    to ``symmetry_tol`` relative to the largest kernel magnitude.
    """
    p = Path(path)
    d = p.parent if p.is_file() else p
    man = json.loads((d / "manifest.json").read_text())
    M = int(man["order"])
    ms = [int(m) for m in man["m_order"]]
    if sorted(ms) != list(range(-M, M + 1)):
        raise ValueError(f"manifest m_order {ms} does not cover -{M}..{M}")
    comps, spacing, dims = {}, None, None
    for m, stem in zip(ms, man["stems"]):
        re, im = read_field(d / f"{stem}_real"), read_field(d / f"{stem}_imag")
        if re.kind != "kernel_real" or im.kind != "kernel_imag":
            raise ValueError(f"{stem}: wrong field kinds {re.kind}/{im.kind}")
        for f in (re, im):
            if dims is None:
                dims, spacing = f.dims, f.spacing
            if f.dims != dims or not np.allclose(f.spacing, spacing, rtol=1e-12, atol=0):
                raise ValueError(f"{stem}: dimension mismatch with the other kernel files")
        comps[m] = re.values + 1j * im.values
    scale = max(float(np.max(np.abs(a))) for a in comps.values()) or 1.0
    kept = []
    for m in range(M + 1):
        a, b = comps[m], np.conj(comps[-m])
        gap = float(np.max(np.abs(a - b))) / scale
        if gap > symmetry_tol:
            raise SymmetryError(f"A_{m} and conj(A_{-m}) differ by {gap:.3e} (relative), tolerance {symmetry_tol:.1e}")
        avg = 0.5 * (a + b)
        kept.append(avg.real.astype(complex) if m == 0 else avg)
    return KernelExpansion(tuple(kept), tuple(spacing), "file", man.get("meta", {}))


def synthesize_psf(K: KernelExpansion, phi: float) -> Field:
    """``p(., phi)`` on the kernel cell, shifted so the origin sits at the centre."""
    return Field(np.fft.fftshift(K.psf(float(phi))), K.spacing)


def direct_forward(f: np.ndarray, phase: np.ndarray, psf, object_spacing: Sequence[float],
                   pad_widths: Sequence[int]) -> np.ndarray:
    """Quadrature ``g(x) = sum_y p(x - y, phi(x)) f(y) dV`` by explicit loops over y.

    ``psf(offsets, phi)`` evaluates the kernel at offset arrays (one per
    axis) and phase array. Output lives on the padded grid. Intended for
    small grids only.
    """
    f = np.asarray(f, dtype=float)
    h = np.asarray(object_spacing, dtype=float)
    out_dims = tuple(n + 2 * k for n, k in zip(f.shape, pad_widths))
    xs = np.meshgrid(*[(np.arange(N) - k) * hj for N, k, hj in zip(out_dims, pad_widths, h)],
                     indexing="ij")
    dV = float(np.prod(h))
    g = np.zeros(out_dims)
    for idx in zip(*np.nonzero(f)):
        y = [i * hj for i, hj in zip(idx, h)]
        g += psf([x - yj for x, yj in zip(xs, y)], phase) * f[idx] * dV
    return g


@dataclass
class JointState:
    """Object on the box and phase coefficients (tensor shaped like the basis)."""

    object: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        self.object = np.asarray(self.object, dtype=float)
        self.phase = np.asarray(self.phase, dtype=float)
        if not (np.all(np.isfinite(self.object)) and np.all(np.isfinite(self.phase))):
            raise ValueError("state must be finite")

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.object >= 0))


@dataclass
class SceneTruth:
    """Ground truth for error reporting; the phase is a gridded field on the padded cell."""

    object: np.ndarray
    phase_field: np.ndarray


class FourPiModel:
    """Forward map, derivative and adjoint for gridded phases and basis coefficients.

    All pairings are L^2 with the midpoint rule: ``<a, b> = sum a b dV`` for
    objects and the w-weighted version for data. The phase part of the
    adjoint is the Riesz representative in the H^2 coefficient metric.
    """

    def __init__(self, kernels: KernelExpansion, basis: PhaseBasis,
                 object_dims: Sequence[int], imag_tol: float = 1e-10):
        self.kernels = kernels
        self.basis = basis
        self.object_dims = tuple(int(n) for n in object_dims)
        self.pad_widths = grid.pad_widths_between(self.object_dims, kernels.dims)
        self.data_dims = kernels.dims
        self.spacing = kernels.spacing
        self.voxel_volume = kernels.voxel_volume
        self.coords = [(np.arange(N) - 0.5 * (N - 1)) * h for N, h in zip(self.data_dims, self.spacing)]
        if basis.ndim != len(self.data_dims):
            raise ValueError("phase basis and kernels differ in dimension")
        self.imag_tol = imag_tol

    # phase <-> field
    def phase_field(self, coeffs: np.ndarray) -> np.ndarray:
        return self.basis.evaluate(coeffs, self.coords)

    def phase_moments(self, values: np.ndarray) -> np.ndarray:
        return self.basis.moments(values, self.coords, self.voxel_volume)

    def fit_phase(self, phase_field: np.ndarray) -> np.ndarray:
        """L^2 projection of a gridded phase onto the polynomial space (for diagnostics)."""
        A = np.ones((1, 1))
        for V in self.basis.vandermonde(self.coords):
            A = np.kron(A, V)
        coef, *_ = np.linalg.lstsq(A, np.asarray(phase_field, float).reshape(-1), rcond=None)
        return coef.reshape(self.basis.shape)

    # convolution terms
    def _object_spectrum(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.object_dims:
            raise ValueError(f"object has dims {f.shape}, expected {self.object_dims}")
        return grid.fftn(grid.pad(f, self.pad_widths))

    def convolutions(self, f: np.ndarray) -> list[np.ndarray]:
        """``C_m = A_m * f`` for m = 0..M on the padded grid."""
        F = self._object_spectrum(f)
        return [grid.ifftn(S * F) * self.voxel_volume for S in self.kernels.spectra]

    def _combine(self, C: list[np.ndarray], phase: np.ndarray) -> np.ndarray:
        g = C[0].real.copy()
        for m in range(1, len(C)):
            g += 2.0 * (np.exp(1j * m * phase) * C[m]).real
        return g

    def _phase_term(self, C: list[np.ndarray], phase: np.ndarray) -> np.ndarray:
        """``sum_m i m e^{i m phi} C_m = -2 sum_{m>=1} m Im(e^{i m phi} C_m)``."""
        D = np.zeros(self.data_dims)
        for m in range(1, len(C)):
            D -= 2.0 * m * (np.exp(1j * m * phase) * C[m]).imag
        return D

    def _check_real(self, C0: np.ndarray, g: np.ndarray) -> None:
        scale = float(np.max(np.abs(g))) if g.size else 0.0
        resid = float(np.max(np.abs(C0.imag))) if C0.size else 0.0
        if scale > 0 and resid > self.imag_tol * scale:
            raise ValueError(f"forward output has imaginary residue {resid / scale:.2e} (relative)")

    def forward_field(self, f: np.ndarray, phase: np.ndarray) -> np.ndarray:
        C = self.convolutions(f)
        g = self._combine(C, phase)
        self._check_real(C[0], g)
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite forward output")
        return g

    def forward(self, state: JointState) -> np.ndarray:
        return self.forward_field(state.object, self.phase_field(state.phase))

    def derivative(self, state: JointState, direction: JointState) -> np.ndarray:
        phase = self.phase_field(state.phase)
        D = self._phase_term(self.convolutions(state.object), phase)
        return self._combine(self.convolutions(direction.object), phase) + self.phase_field(direction.phase) * D

    def adjoint_parts(self, phase: np.ndarray, D: np.ndarray, s: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
        """Object adjoint and phase moments for the weighted data ``s = g w``."""
        spec = self.kernels.conj_spectra[0] * grid.fftn(s)
        for m in range(1, self.kernels.order + 1):
            spec += 2.0 * self.kernels.conj_spectra[m] * grid.fftn(np.exp(-1j * m * phase) * s)
        a = grid.crop(grid.ifftn(spec).real, self.pad_widths) * self.voxel_volume
        b = self.phase_moments(D * s)
        return a, b

    def adjoint(self, state: JointState, g: np.ndarray, w) -> JointState:
        """``F'[x]* g`` for data pairing ``sum g1 g2 w dV``; phase part is ``G^{-1} b``."""
        wv = w.values if isinstance(w, Field) else np.asarray(w, dtype=float)
        phase = self.phase_field(state.phase)
        D = self._phase_term(self.convolutions(state.object), phase)
        a, b = self.adjoint_parts(phase, D, np.asarray(g, float) * wv)
        return JointState(a, self.basis.riesz(b).reshape(self.basis.shape))

    def psf_at(self, phi: float) -> np.ndarray:
        return self.kernels.psf(phi)


class FourPiProblem(ForwardOperator):
    """Whitened 4Pi operator for the IRGNM.

    Coordinates: ``u = [sqrt(dV) f.ravel(), R c]`` and data
    ``v = sqrt(w dV) g.ravel()``. The object block is nonnegativity
    constrained, the phase block is free.
    """

    def __init__(self, model: FourPiModel, weight: WeightField | np.ndarray):
        self.model = model
        wv = weight.values if isinstance(weight, Field) else np.asarray(weight, dtype=float)
        if wv.shape != model.data_dims:
            raise ValueError("weight grid does not match the data grid")
        if np.any(wv <= 0):
            raise ValueError("weights must be positive")
        self.weight = wv
        self.n_object = int(np.prod(model.object_dims))
        self.n_phase = model.basis.size
        self.constraint_mask = np.concatenate([np.ones(self.n_object, bool), np.zeros(self.n_phase, bool)])
        self._sqrt_dv = math.sqrt(model.voxel_volume)
        self._data_scale = np.sqrt(wv * model.voxel_volume)

    @property
    def size(self) -> int:
        return self.n_object + self.n_phase

    # coordinate maps
    def encode(self, state: JointState) -> np.ndarray:
        return np.concatenate([self._sqrt_dv * state.object.reshape(-1),
                               self.model.basis.whiten(state.phase)])

    def decode(self, u: np.ndarray) -> JointState:
        u = np.asarray(u, dtype=float)
        f = u[:self.n_object].reshape(self.model.object_dims) / self._sqrt_dv
        c = self.model.basis.unwhiten(u[self.n_object:]).reshape(self.model.basis.shape)
        return JointState(f, c)

    def encode_data(self, g: np.ndarray) -> np.ndarray:
        return (self._data_scale * np.asarray(g, float)).reshape(-1)

    def decode_data(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, float).reshape(self.model.data_dims) / self._data_scale

    # operator interface
    def evaluate(self, u):
        return self.encode_data(self.model.forward(self.decode(u)))

    def derivative_apply(self, u, h):
        return self.linearize(u).apply(h)

    def derivative_adjoint(self, u, v):
        return self.linearize(u).adjoint(v)

    def linearize(self, u) -> Linearization:
        m = self.model
        x = self.decode(u)
        phase = m.phase_field(x.phase)
        C = m.convolutions(x.object)
        g = m._combine(C, phase)
        m._check_real(C[0], g)
        D = m._phase_term(C, phase)
        rows = self._data_scale
        basis = m.basis
        n_obj = self.n_object

        def apply(h):
            f = h[:n_obj].reshape(m.object_dims) / self._sqrt_dv
            c = basis.unwhiten(h[n_obj:])
            out = m._combine(m.convolutions(f), phase) + m.phase_field(c) * D
            return (rows * out).reshape(-1)

        def adjoint(v):
            # v = sqrt(w dV) g, hence g w = v sqrt(w dV) / dV
            s = np.asarray(v, float).reshape(m.data_dims) * rows / m.voxel_volume
            a, b = m.adjoint_parts(phase, D, s)
            return np.concatenate([self._sqrt_dv * a.reshape(-1), basis.unwhiten_adjoint(b)])

        return Linearization(self.encode_data(g), apply, adjoint)

    def errors(self, u, truth) -> tuple[float, float, float]:
        """Object L^2 error on the box and phase L^2 error on the padded cell."""
        x = self.decode(u)
        dV = self.model.voxel_volume
        if isinstance(truth, SceneTruth):
            ef = float(np.sqrt(np.sum((x.object - truth.object) ** 2) * dV))
            ep = float(np.sqrt(np.sum((self.model.phase_field(x.phase) - truth.phase_field) ** 2) * dV))
            return math.hypot(ef, ep), ef, ep
        t = np.asarray(truth, dtype=float)
        e = float(np.linalg.norm(np.asarray(u) - t))
        ef = float(np.linalg.norm(np.asarray(u)[:self.n_object] - t[:self.n_object]))
        ep = float(np.linalg.norm(np.asarray(u)[self.n_object:] - t[self.n_object:]))
        return e, ef, ep
