"""Equilibrium pair-jump dynamics on continuum point configurations:
simulators, generator evaluators, scaling-limit experiments, and the
discretized second-quantization picture."""

__version__ = "0.1.0"

from .geometry import Configuration, TorusGeometry, min_image_diff, sample_poisson
from .kernels import (
    FACTORIZED,
    MOMENTUM,
    KernelSpec,
    RadialProfile,
    check_symmetry,
    eval_q,
    kernel_constants,
    scaled_kernel_bd,
    scaled_kernel_diffusive,
)
from .observables import (
    CylinderFunction,
    ExponentialFunction,
    MCEstimate,
    TestProfile,
    eval_cylinder,
    point_grad,
    point_laplacian,
)

__all__ = [
    "Configuration",
    "CylinderFunction",
    "ExponentialFunction",
    "FACTORIZED",
    "KernelSpec",
    "MCEstimate",
    "MOMENTUM",
    "RadialProfile",
    "TestProfile",
    "TorusGeometry",
    "check_symmetry",
    "eval_cylinder",
    "eval_q",
    "kernel_constants",
    "min_image_diff",
    "point_grad",
    "point_laplacian",
    "sample_poisson",
    "scaled_kernel_bd",
    "scaled_kernel_diffusive",
]
