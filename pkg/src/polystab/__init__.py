"""Polygonal inclusions in layered conductors: FEM forward maps, DtN operators,
distributed shape derivatives and Lipschitz-stability experiments."""

__version__ = "0.1.0"
