"""Numerical laboratory for KPP front speeds in periodic incompressible flows."""

__version__ = "0.1.0"
