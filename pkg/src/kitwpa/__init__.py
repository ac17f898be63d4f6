"""Simulation and noise-calibration toolkit for kinetic-inductance traveling-wave parametric amplifiers."""

__version__ = "0.1.0"
