"""mhdkit: structure-preserving finite element solvers for incompressible
MHD, Hall MHD (2.5D) and anisothermal MHD on 2D triangular meshes."""

__version__ = "0.1.0"
