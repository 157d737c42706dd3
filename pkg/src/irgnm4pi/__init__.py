"""Convexly constrained IRGNM with a semi-smooth Newton Tikhonov solver and a 4Pi imaging model."""
from .chebyshev import PhaseBasis, build_phase_basis
from .fourpi import (CosinePsfSpec, FourPiModel, FourPiProblem, JointState, KernelExpansion,
                     build_cosine_expansion, load_expansion, save_expansion, synthesize_psf)
from .grid import DomainBox, Field, WeightField
from .irgnm import IrgnmConfig, IrgnmTrace, NoiseBudget, run
from .tikhonov import KktReport, LinearProblem, SsnConfig, solve
from .toys import ToySpec, build_linear_toy, build_nonlinear_toy, measure_rate, perturb

__version__ = "0.1.0"

__all__ = [
    "PhaseBasis", "build_phase_basis",
    "CosinePsfSpec", "FourPiModel", "FourPiProblem", "JointState", "KernelExpansion",
    "build_cosine_expansion", "load_expansion", "save_expansion", "synthesize_psf",
    "DomainBox", "Field", "WeightField",
    "IrgnmConfig", "IrgnmTrace", "NoiseBudget", "run",
    "KktReport", "LinearProblem", "SsnConfig", "solve",
    "ToySpec", "build_linear_toy", "build_nonlinear_toy", "measure_rate", "perturb",
]
