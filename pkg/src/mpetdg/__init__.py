"""Discontinuous Galerkin solver on polytopic meshes for dynamic multiple-network poroelasticity."""

__version__ = "0.1.0"
