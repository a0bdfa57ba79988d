"""3D tetrahedral finite-element drift-diffusion device simulator.

Solves the stationary Poisson / electron / hole continuity system with a
decoupled (Gummel) fixed-point iteration, EAFE-stabilized P1 elements, and
three interchangeable per-element current-density reconstructions
(``ddfe``, ``method_a``, ``method_b``).
"""

from tetdd.mesh import BoxMeshSpec, Mesh, build_box_mesh
from tetdd.physics import DopingProfile, MaterialParams, Scaling

__all__ = [
    "BoxMeshSpec",
    "Mesh",
    "build_box_mesh",
    "DopingProfile",
    "MaterialParams",
    "Scaling",
]

__version__ = "0.1.0"
