"""Desk-scale layered oscillatory constructions for the incompressible porous media equation."""

__version__ = "0.1.0"
