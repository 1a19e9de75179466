"""Lithium-inhomogeneity ECM simulation, parameter fitting and aging analytics."""

__version__ = "0.1.0"
