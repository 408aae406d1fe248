"""Simulation and filtering of a qubit whose fluorescence and dispersive readout are both monitored."""

__version__ = "0.1.0"
