"""Parametric FEM solver for axisymmetric solid-state dewetting."""

__version__ = "0.1.0"
