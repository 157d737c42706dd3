"""Configuration handling and the simulate / reconstruct pipeline for 4Pi scenes."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import chebyshev, fourpi, grid, irgnm, scenes
from .fieldio import read_field, write_field
from .tikhonov import SsnConfig

__all__ = [
    "DEFAULT_CONFIG",
    "merge_config",
    "Setup",
    "build_setup",
    "simulate_scene",
    "load_scene",
    "reconstruct",
    "save_scene",
]

DEFAULT_CONFIG: dict = {
    "grid": {"dims": [64, 64], "spacing_nm": [60.0, 60.0]},
    "psf": {
        "power": 2,
        "numerical_aperture": 1.34,
        "excitation_nm": 635.0,
        "emission_nm": 680.0,
        "immersion_index": 1.518,
        "n_sigma": 3.0,
        "kernel_dir": None,
    },
    "phase_basis": {"degrees": None},  # None: 7 per axis in 2-D, 3 in 3-D
    "scene": {
        "kind": "filaments",
        "n_filaments": 4,
        "thickness_nm": 60.0,
        "block_fraction": 0.4,
        "peak": 100.0,
        "phase_shift": 0.5,
        "phase_sine_amp": 1.2,
        "phase_arctan_amp": 1.2,
    },
    "data": {"dir": None, "use_exact": False, "weight_floor": 1.0},
    "irgnm": {
        "alpha0": 1e-3,
        "decay": 2.0 / 3.0,
        "eta": 1.0,
        "delta_bar": 0.0,
        "max_iters": 12,
        "variant": "constrained",
    },
    "ssn": {
        "complementarity_scale": 1.0,
        "max_outer": 100,
        "kkt_tol": 1e-6,
        "cg_tol": 1e-7,
        "cg_max": 2000,
    },
    "psf_images": {
        "phases": [0.0, math.pi / 2, math.pi],
        "powers": [2, 4],
        "dims": [16, 16],
        "spacing_nm": [20.0, 20.0],
        "scale_bar_nm": 800.0,
    },
    "rates": {
        "linear": {"alpha_min": 1e-6, "alpha_max": 1e-1, "n_alpha": 21, "tolerance": 0.05},
        "noise_free": {"iterations": 20, "window": [3, 18], "tolerance": 0.15},
        "noisy": {"delta_min": 1e-5, "delta_max": 1e-2, "n_delta": 7, "eta": 1.0, "tolerance": 0.15},
        "perturbation": {"n_trials": 50},
    },
}


def merge_config(base: dict, override: dict | None) -> dict:
    """Recursive dict merge; unknown keys in ``override`` are rejected."""
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if key not in out:
            raise KeyError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = merge_config(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class Setup:
    box: grid.DomainBox
    kernels: fourpi.KernelExpansion
    basis: chebyshev.PhaseBasis
    model: fourpi.FourPiModel
    psf_spec: fourpi.CosinePsfSpec | None


def psf_spec_from_config(cfg: dict, ndim: int, power: int | None = None) -> fourpi.CosinePsfSpec:
    p = cfg["psf"]
    return fourpi.CosinePsfSpec.from_optics(
        ndim, p["numerical_aperture"], p["excitation_nm"], p["emission_nm"],
        p["immersion_index"], power if power is not None else p["power"])


def build_setup(cfg: dict, power: int | None = None) -> Setup:
    dims = tuple(int(n) for n in cfg["grid"]["dims"])
    spacing = tuple(float(h) for h in cfg["grid"]["spacing_nm"])
    if len(dims) != len(spacing) or len(dims) not in (2, 3):
        raise ValueError("grid dims and spacing must both have 2 or 3 entries")
    kdir = cfg["psf"].get("kernel_dir")
    if kdir:
        kernels = fourpi.load_expansion(kdir)
        if not np.allclose(kernels.spacing, spacing, rtol=1e-12, atol=0):
            raise ValueError("kernel spacing differs from the grid spacing")
        widths = grid.pad_widths_between(dims, kernels.dims)
        box = grid.DomainBox.from_dims(dims, spacing, [k * h for k, h in zip(widths, spacing)])
        spec = None
    else:
        spec = psf_spec_from_config(cfg, len(dims), power)
        box = grid.DomainBox.from_dims(dims, spacing, spec.kernel_halfwidths(cfg["psf"]["n_sigma"]))
        kernels = fourpi.build_cosine_expansion(spec, box)
    degrees = cfg["phase_basis"]["degrees"] or ([7] * len(dims) if len(dims) == 2 else [3] * len(dims))
    basis = chebyshev.build_phase_basis(degrees, box.extended_halfwidths)
    model = fourpi.FourPiModel(kernels, basis, box.object_dims)
    return Setup(box, kernels, basis, model, spec)


def simulate_scene(cfg: dict, setup: Setup, seed: int) -> scenes.SimulatedData:
    from .experiments import derive_seeds
    scene_seed, noise_seed = derive_seeds(seed, 2)
    sc = cfg["scene"]
    box = setup.box
    if sc["kind"] == "filaments":
        unit = scenes.filament_object(box.object_dims, box.voxel_spacing, sc["n_filaments"],
                                      sc["thickness_nm"], scene_seed)
    elif sc["kind"] == "block":
        unit = scenes.block_object(box.object_dims, box.voxel_spacing, sc["block_fraction"])
    else:
        raise ValueError(f"unknown scene kind {sc['kind']!r}")
    phase = scenes.sine_arctan_phase(box.extended_dims, box.voxel_spacing, sc["phase_shift"],
                                     sc["phase_sine_amp"], sc["phase_arctan_amp"])
    return scenes.simulate(setup.model, unit, phase, float(sc["peak"]), noise_seed)


def save_scene(sim: scenes.SimulatedData, setup: Setup, out: Path) -> list[Path]:
    h = setup.box.voxel_spacing
    paths = []
    for name, arr, kind in (("object_true", sim.object, "object"),
                            ("phase_true", sim.phase_field, "phase"),
                            ("data_exact", sim.exact, "data"),
                            ("data", sim.noisy, "data")):
        paths.append(write_field(out / name, arr, h, kind)[0])
    return paths


def load_scene(directory) -> tuple[np.ndarray, np.ndarray, fourpi.SceneTruth | None]:
    """Noisy data, exact data (if present) and the ground truth (if present)."""
    d = Path(directory)
    data = read_field(d / "data").values
    exact = read_field(d / "data_exact").values if (d / "data_exact.json").exists() else None
    truth = None
    if (d / "object_true.json").exists() and (d / "phase_true.json").exists():
        truth = fourpi.SceneTruth(read_field(d / "object_true").values,
                                  read_field(d / "phase_true").values)
    return data, exact, truth


def irgnm_config(cfg: dict, variant: str | None = None) -> irgnm.IrgnmConfig:
    ic = cfg["irgnm"]
    return irgnm.IrgnmConfig(alpha0=ic["alpha0"], decay=ic["decay"], eta=ic["eta"],
                             delta_bar=ic["delta_bar"], max_iters=ic["max_iters"],
                             variant=variant or ic["variant"], ssn=SsnConfig(**cfg["ssn"]))


def reconstruct(cfg: dict, setup: Setup, data: np.ndarray, truth: fourpi.SceneTruth | None,
                variant: str | None = None):
    """Run the IRGNM from (f, phi) = (0, 0); returns the final state and the trace."""
    if data.shape != setup.model.data_dims:
        raise ValueError(f"data dims {data.shape} do not match the padded grid {setup.model.data_dims}")
    weight = grid.weight_from_data(grid.Field(data, setup.box.voxel_spacing), cfg["data"]["weight_floor"])
    problem = fourpi.FourPiProblem(setup.model, weight)
    x0 = np.zeros(problem.size)
    u, trace = irgnm.run(problem, problem.encode_data(data), x0, irgnm_config(cfg, variant), truth=truth)
    return problem.decode(u), trace, problem
