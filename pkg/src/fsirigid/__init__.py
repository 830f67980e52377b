"""Fluid-rigid-body interaction in a fixed reference domain."""

__version__ = "0.1.0"
