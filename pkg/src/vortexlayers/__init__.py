"""Spectral simulation of layered vortex sheets and their Birkhoff-Rott limit."""
from .dynamics import (EvolutionConfig, LayeredState, ReferenceState, admissibility_residual,
                       assemble_velocity, build_initial_state, integrate, layer_nodes, rhs,
                       reference_rhs, rk4_step)
from .geometry import CurveSpec, circle, ellipse, frame
from .kernels import KernelEvalConfig, biot_savart, br_operator, k0, k_eps
from .spectral import PeriodicGrid, SpectralField

__all__ = [
    "CurveSpec", "EvolutionConfig", "KernelEvalConfig", "LayeredState", "PeriodicGrid",
    "ReferenceState", "SpectralField", "admissibility_residual", "assemble_velocity",
    "biot_savart", "br_operator", "build_initial_state", "circle", "ellipse", "frame",
    "integrate", "k0", "k_eps", "layer_nodes", "reference_rhs", "rhs", "rk4_step",
]
