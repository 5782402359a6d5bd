"""Discrete elastic rods with convex frictional contact against rigid bodies."""

from . import errors
from .rod import (
    CrossSection,
    RodParameters,
    RodState,
    make_rod_state,
    compute_frames,
    elastic_energy,
    elastic_gradient,
    elastic_hessian,
    lumped_mass,
    time_parallel_transport,
)

__all__ = [
    "errors",
    "CrossSection",
    "RodParameters",
    "RodState",
    "make_rod_state",
    "compute_frames",
    "elastic_energy",
    "elastic_gradient",
    "elastic_hessian",
    "lumped_mass",
    "time_parallel_transport",
]

__version__ = "0.1.0"
