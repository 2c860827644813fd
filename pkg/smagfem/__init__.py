"""Smagfem - Smagorinsky-stabilized Navier-Stokes finite elements on macro meshes."""

__version__ = "0.1.0"
