"""Simulation and inequality audits for viscoelastic wave equations with delayed feedback."""

__version__ = "0.1.0"
